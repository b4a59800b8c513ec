//! Experiment configuration and the pre-train-then-stream pipeline.
//!
//! Config files are flat `key = value` lines; `#` starts a comment. Every key
//! can be overridden after loading. Unknown keys are rejected.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use crate::binio::{read_file, write_file};
use crate::error::{Error, PhaseContext, Result};
use crate::feature_io::{gen_synthetic_gaussian, gen_synthetic_holdout, load_dataset, FeatureDataset, SyntheticSpec};
use crate::learner::{derive_seed, Classifier, OnlineLearner};
use crate::metrics::{checkpoint_evaluate, emit_report, CurvePoint, LearningCurve, ReportFormat, RunReport};
use crate::pq::PqParams;
use crate::remind::{RemindConfig, RemindState};
use crate::replay_softmax::ReplaySoftmax;
use crate::slda::{CovarianceInit, SldaState};
use crate::stream::{build_class_incremental_stream, build_iid_stream, select_pretrain_classes, SplitSpec, StreamMode, StreamPlan};

/// `(key, default)`; `None` means the key has no default.
const KEYS: &[(&str, Option<&str>)] = &[
    ("seed", Some("0")),
    ("dataset", None),
    ("eval_dataset", None),
    ("feature_source", None),
    ("output_dir", None),
    ("synthetic.num_classes", Some("20")),
    ("synthetic.dim", Some("32")),
    ("synthetic.examples_per_class", Some("100")),
    ("synthetic.class_separation", Some("4")),
    ("synthetic.noise_scale", Some("1")),
    ("synthetic.eval_per_class", Some("50")),
    ("synthetic.seed", None),
    ("pretrain_classes", Some("5")),
    ("stream", Some("class_incremental")),
    ("checkpoint_every", Some("5")),
    ("learner", Some("slda")),
    ("slda.shrinkage", Some("0.0001")),
    ("slda.plastic", Some("true")),
    ("slda.init", Some("identity")),
    ("softmax.learning_rate", Some("0.1")),
    ("softmax.capacity", Some("735000")),
    ("softmax.replay", Some("50")),
    ("remind.subspaces", Some("32")),
    ("remind.codebook_size", Some("256")),
    ("remind.pq_iters", Some("25")),
    ("remind.capacity", Some("959665")),
    ("remind.hidden", Some("256")),
    ("remind.replay", Some("50")),
    ("remind.mixup_alpha", Some("0.1")),
    ("remind.learning_rate", Some("0.1")),
    ("remind.warm_epochs", Some("10")),
    ("remind.warm_batch_size", Some("64")),
    ("report.wall_clock", Some("false")),
];

/// Keys that do not affect results and are left out of the report echo.
const NOT_ECHOED: &[&str] = &["output_dir", "report.wall_clock"];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentConfig {
    entries: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LearnerKind {
    Slda,
    ReplaySoftmax,
    Remind,
}

impl FromStr for LearnerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "slda" => Ok(LearnerKind::Slda),
            "replay_softmax" => Ok(LearnerKind::ReplaySoftmax),
            "remind" => Ok(LearnerKind::Remind),
            other => Err(Error::Config(format!("unknown learner {other:?}"))),
        }
    }
}

impl LearnerKind {
    fn prefix(self) -> &'static str {
        match self {
            LearnerKind::Slda => "slda.",
            LearnerKind::ReplaySoftmax => "softmax.",
            LearnerKind::Remind => "remind.",
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::Config(format!("{} is not UTF-8", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KEYS.iter().any(|(k, _)| *k == key) {
            return Err(Error::Config(format!("unknown key {key:?}")));
        }
        self.entries.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Apply a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {pair:?} is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str).or_else(|| {
            KEYS.iter()
                .find(|(k, _)| *k == key)
                .and_then(|(_, d)| *d)
        })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .raw(key)
            .ok_or_else(|| Error::Config(format!("missing required key {key:?}")))?;
        raw.parse()
            .map_err(|_| Error::Config(format!("bad value for {key}: {raw:?}")))
    }

    pub fn get_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some(_) => self.get(key).map(Some),
        }
    }

    pub fn master_seed(&self) -> Result<u64> {
        self.get("seed")
    }

    pub fn learner(&self) -> Result<LearnerKind> {
        self.get("learner")
    }

    fn synthetic_seed(&self) -> Result<u64> {
        Ok(match self.get_opt("synthetic.seed")? {
            Some(s) => s,
            None => derive_seed(self.master_seed()?, "synthetic"),
        })
    }

    pub fn synthetic_spec(&self) -> Result<SyntheticSpec> {
        Ok(SyntheticSpec {
            num_classes: self.get("synthetic.num_classes")?,
            dim: self.get("synthetic.dim")?,
            examples_per_class: self.get("synthetic.examples_per_class")?,
            class_separation: self.get("synthetic.class_separation")?,
            noise_scale: self.get("synthetic.noise_scale")?,
            seed: self.synthetic_seed()?,
        })
    }

    /// Every key that influences results, with defaults and derived seeds
    /// filled in.
    pub fn resolved(&self) -> Result<BTreeMap<String, String>> {
        let learner = self.learner()?;
        let synthetic = self.raw("dataset").is_none();
        let mut out = BTreeMap::new();
        for (key, _) in KEYS {
            if NOT_ECHOED.contains(key) {
                continue;
            }
            let section_ok = match key.split_once('.') {
                None => true,
                Some(("synthetic", _)) => synthetic,
                Some(_) => key.starts_with(learner.prefix()),
            };
            if !section_ok {
                continue;
            }
            if let Some(v) = self.raw(key) {
                out.insert(key.to_string(), v.to_string());
            }
        }
        let master = self.master_seed()?;
        if synthetic {
            out.insert("synthetic.seed".into(), self.synthetic_seed()?.to_string());
        }
        for purpose in ["split", "stream", "learner"] {
            out.insert(format!("derived_seed.{purpose}"), derive_seed(master, purpose).to_string());
        }
        Ok(out)
    }

    fn output_dir(&self) -> Result<PathBuf> {
        Ok(PathBuf::from(self.get::<String>("output_dir")?))
    }
}

/// Any of the three online learners.
#[derive(Debug, Clone)]
pub enum Learner {
    Slda(SldaState),
    ReplaySoftmax(ReplaySoftmax),
    Remind(Box<RemindState>),
}

impl Learner {
    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            Learner::Slda(s) => s.to_bytes(),
            Learner::ReplaySoftmax(s) => s.to_bytes(),
            Learner::Remind(s) => s.to_bytes(),
        }
    }

    /// Dispatch on the snapshot's magic bytes.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        match bytes.get(..4) {
            Some(b"SLDA") => SldaState::from_bytes(bytes).map(Learner::Slda),
            Some(b"RSMX") => ReplaySoftmax::from_bytes(bytes).map(Learner::ReplaySoftmax),
            Some(b"RMND") => RemindState::from_bytes(bytes).map(|s| Learner::Remind(Box::new(s))),
            _ => Err(Error::Format {
                offset: 0,
                msg: "unrecognized learner snapshot".into(),
            }),
        }
    }

    pub fn kind(&self) -> LearnerKind {
        match self {
            Learner::Slda(_) => LearnerKind::Slda,
            Learner::ReplaySoftmax(_) => LearnerKind::ReplaySoftmax,
            Learner::Remind(_) => LearnerKind::Remind,
        }
    }
}

impl Classifier for Learner {
    fn scores(&self, z: &[f32]) -> Result<Vec<(u32, f64)>> {
        match self {
            Learner::Slda(s) => s.scores(z),
            Learner::ReplaySoftmax(s) => s.scores(z),
            Learner::Remind(s) => s.scores(z),
        }
    }
}

impl OnlineLearner for Learner {
    fn learn(&mut self, z: &[f32], label: u32) -> Result<()> {
        match self {
            Learner::Slda(s) => s.learn(z, label),
            Learner::ReplaySoftmax(s) => s.learn(z, label),
            Learner::Remind(s) => s.learn(z, label),
        }
    }

    fn known_classes(&self) -> Vec<u32> {
        match self {
            Learner::Slda(s) => s.known_classes(),
            Learner::ReplaySoftmax(s) => s.known_classes(),
            Learner::Remind(s) => s.known_classes(),
        }
    }
}

/// Build the learner and run its offline initialization on the pre-train subset.
pub fn init_learner(cfg: &ExperimentConfig, dim: usize, pretrain: &FeatureDataset) -> Result<Learner> {
    let seed = derive_seed(cfg.master_seed()?, "learner");
    Ok(match cfg.learner()? {
        LearnerKind::Slda => {
            let init = match cfg.get::<String>("slda.init")?.as_str() {
                "identity" => CovarianceInit::Identity,
                "zeros" => CovarianceInit::Zeros,
                other => return Err(Error::Config(format!("unknown slda.init {other:?}"))),
            };
            let mut s = SldaState::new(dim, cfg.get("slda.shrinkage")?, cfg.get("slda.plastic")?, init)?;
            s.fit_base(pretrain)?;
            Learner::Slda(s)
        }
        LearnerKind::ReplaySoftmax => {
            let mut l = ReplaySoftmax::new(
                dim,
                cfg.get("softmax.learning_rate")?,
                cfg.get("softmax.capacity")?,
                seed,
            );
            l.replay_count = cfg.get("softmax.replay")?;
            Learner::ReplaySoftmax(l)
        }
        LearnerKind::Remind => {
            let rc = RemindConfig {
                pq: PqParams {
                    num_subspaces: cfg.get("remind.subspaces")?,
                    codebook_size: cfg.get("remind.codebook_size")?,
                    max_iters: cfg.get("remind.pq_iters")?,
                    ..PqParams::default()
                },
                capacity: cfg.get("remind.capacity")?,
                hidden: cfg.get("remind.hidden")?,
                mixup_alpha: cfg.get("remind.mixup_alpha")?,
                replay_count: cfg.get("remind.replay")?,
                learning_rate: cfg.get("remind.learning_rate")?,
                warm_epochs: cfg.get("remind.warm_epochs")?,
                warm_batch_size: cfg.get("remind.warm_batch_size")?,
                seed,
            };
            Learner::Remind(Box::new(RemindState::init(pretrain, &rc)?))
        }
    })
}

/// Training and evaluation data for a config.
pub fn load_data(cfg: &ExperimentConfig) -> Result<(FeatureDataset, FeatureDataset, String)> {
    match cfg.get_opt::<String>("dataset")? {
        Some(path) => {
            let eval_path: String = cfg
                .get_opt("eval_dataset")?
                .ok_or_else(|| Error::Config("eval_dataset is required with dataset".into()))?;
            for p in [&path, &eval_path] {
                if !Path::new(p).exists() {
                    return Err(Error::io(p, std::io::Error::from(std::io::ErrorKind::NotFound)));
                }
            }
            let train = load_dataset(&path)?;
            let eval = load_dataset(&eval_path)?;
            if eval.dim() != train.dim() {
                return Err(Error::DimensionMismatch {
                    expected: train.dim(),
                    got: eval.dim(),
                });
            }
            let source = cfg.get_opt("feature_source")?.unwrap_or_else(|| {
                Path::new(&path)
                    .file_stem()
                    .map_or_else(|| path.clone(), |s| s.to_string_lossy().into_owned())
            });
            Ok((train, eval, source))
        }
        None => {
            let spec = cfg.synthetic_spec()?;
            let train = gen_synthetic_gaussian(&spec)?;
            let eval = gen_synthetic_holdout(&spec, cfg.get("synthetic.eval_per_class")?)?;
            let source = cfg.get_opt("feature_source")?.unwrap_or_else(|| "synthetic".into());
            Ok((train, eval, source))
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Skip initialization and continue from this learner snapshot.
    pub resume_from: Option<PathBuf>,
    /// Stop once the post-init snapshot is written.
    pub stop_after_init: bool,
}

/// Output of [`run_experiment`]; `report` is `None` when stopped after init.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: Option<RunReport>,
    pub output_dir: PathBuf,
}

pub const REPORT_FILE: &str = "report.json";
pub const CURVE_FILE: &str = "curve.csv";
pub const PLAN_FILE: &str = "plan.txt";
pub const SNAPSHOT_FILE: &str = "init.snap";

fn evaluate_point(
    learner: &Learner,
    eval: &FeatureDataset,
    seen: &BTreeSet<u32>,
    position: usize,
    classes_seen: usize,
) -> Result<CurvePoint> {
    if learner.known_classes().is_empty() {
        // Nothing learned yet (replay softmax has no offline phase).
        let evaluated = eval.labels().iter().filter(|l| seen.contains(l)).count();
        return Ok(CurvePoint { position, classes_seen, evaluated, top1: 0.0, top5: 0.0 });
    }
    let r = checkpoint_evaluate(learner, eval, seen, &[1, 5])?;
    Ok(CurvePoint {
        position,
        classes_seen,
        evaluated: r.evaluated,
        top1: r.accuracies[0],
        top5: r.accuracies[1],
    })
}

/// Split, initialize on the pre-train classes, stream the full dataset with
/// pre-train classes first, and evaluate at every checkpoint.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutcome> {
    let started = Instant::now();
    let echo = cfg.resolved().phase("config")?;
    let master = cfg.master_seed().phase("config")?;
    let out_dir = cfg.output_dir().phase("config")?;
    if let Some(p) = &opts.resume_from {
        if !p.exists() {
            return Err(Error::io(p, std::io::Error::from(std::io::ErrorKind::NotFound))).phase("config");
        }
    }
    let (train, eval, source) = load_data(cfg).phase("load")?;
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e)).phase("load")?;

    let split = SplitSpec {
        pretrain_num_classes: cfg.get("pretrain_classes").phase("split")?,
        seed: derive_seed(master, "split"),
    };
    let (pretrain, _continual) = select_pretrain_classes(train.num_classes(), &split).phase("split")?;

    let mut learner = match &opts.resume_from {
        Some(path) => {
            let l = Learner::from_bytes(&read_file(path)?).phase("resume")?;
            if l.kind() != cfg.learner()? {
                return Err(Error::Config("snapshot learner does not match config".into())).phase("resume");
            }
            l
        }
        None => {
            let l = init_learner(cfg, train.dim(), &train.filter_classes(&pretrain)).phase("init")?;
            write_file(&out_dir.join(SNAPSHOT_FILE), &l.to_bytes()).phase("init")?;
            l
        }
    };
    if opts.stop_after_init {
        return Ok(RunOutcome { report: None, output_dir: out_dir });
    }

    let every: usize = cfg.get("checkpoint_every").phase("stream")?;
    let stream_seed = derive_seed(master, "stream");
    let plan: StreamPlan = match StreamMode::parse(&cfg.get::<String>("stream")?).phase("stream")? {
        StreamMode::ClassIncremental => build_class_incremental_stream(&train, &pretrain, stream_seed, every),
        StreamMode::Iid => build_iid_stream(&train, stream_seed, every),
    }
    .phase("stream")?;
    write_file(&out_dir.join(PLAN_FILE), plan.to_text().as_bytes()).phase("stream")?;

    let mut points = vec![evaluate_point(&learner, &eval, &pretrain, 0, pretrain.len()).phase("evaluate")?];
    let mut seen = pretrain.clone();
    let mut checkpoints = plan.checkpoints.iter().peekable();
    for (i, &idx) in plan.order.iter().enumerate() {
        let label = train.label(idx);
        learner.learn(train.vector(idx), label).phase("stream")?;
        seen.insert(label);
        while let Some(cp) = checkpoints.next_if(|cp| cp.position == i + 1) {
            points.push(evaluate_point(&learner, &eval, &seen, cp.position, cp.classes_seen).phase("evaluate")?);
        }
    }

    let curve = LearningCurve {
        method: cfg.get::<String>("learner")?,
        feature_source: source,
        pretrain_size: pretrain.len(),
        points,
    };
    let wall = cfg
        .get::<bool>("report.wall_clock")?
        .then(|| started.elapsed().as_secs_f64());
    let report = RunReport::new(echo, curve, wall).phase("report")?;
    emit_report(&report, &out_dir.join(REPORT_FILE), ReportFormat::Json).phase("report")?;
    emit_report(&report, &out_dir.join(CURVE_FILE), ReportFormat::Csv).phase("report")?;
    Ok(RunOutcome { report: Some(report), output_dir: out_dir })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_override() {
        let mut c = ExperimentConfig::parse("seed = 3\n# comment\nlearner=remind  # trailing\n").unwrap();
        assert_eq!(c.master_seed().unwrap(), 3);
        assert_eq!(c.learner().unwrap(), LearnerKind::Remind);
        c.set_pair("learner=slda").unwrap();
        assert_eq!(c.learner().unwrap(), LearnerKind::Slda);
        assert!(c.set_pair("bogus=1").is_err());
        assert!(ExperimentConfig::parse("no equals sign").is_err());
    }

    #[test]
    fn echo_includes_only_relevant_sections() {
        let c = ExperimentConfig::parse("learner = replay_softmax\noutput_dir = /tmp/x").unwrap();
        let echo = c.resolved().unwrap();
        assert!(echo.contains_key("softmax.capacity"));
        assert!(!echo.contains_key("remind.hidden"));
        assert!(!echo.contains_key("output_dir"));
        assert!(echo.contains_key("synthetic.seed"));
        assert!(echo.contains_key("derived_seed.stream"));
    }

    #[test]
    fn missing_dataset_path_is_named() {
        let c = ExperimentConfig::parse("dataset = /nonexistent/a.fset\neval_dataset = /nonexistent/b.fset").unwrap();
        let err = load_data(&c).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/a.fset"));
    }
}
