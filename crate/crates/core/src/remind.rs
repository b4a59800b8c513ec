//! REMIND-style learner: product-quantized replay feeding a trainable
//! one-hidden-layer head.
//!
//! The buffer only ever holds PQ codes. Replayed codes are decoded, mixed
//! pairwise with Beta-distributed weights, and trained on together with the
//! incoming example. Prediction runs the head on the raw embedding and never
//! touches the buffer.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

use crate::binio::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::feature_io::FeatureDataset;
use crate::learner::{check_input, derive_seed, widen, Classifier, OnlineLearner};
use crate::pq::{PqCode, PqModel, PqParams};
use crate::replay::ReplayBuffer;
use crate::replay_softmax::log_softmax;

pub const DEFAULT_CAPACITY: usize = 959_665;
pub const DEFAULT_HIDDEN: usize = 256;
pub const DEFAULT_MIXUP_ALPHA: f64 = 0.1;

const HEAD_MAGIC: &[u8; 4] = b"PHED";
const STATE_MAGIC: &[u8; 4] = b"RMND";
const VERSION: u32 = 1;

/// Sparse class distribution; weights are nonnegative and sum to one.
pub type SoftLabel = Vec<(u32, f64)>;

pub fn one_hot(class: u32) -> SoftLabel {
    vec![(class, 1.0)]
}

/// `dim → hidden (ReLU) → classes` with growable output rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PlasticHead {
    dim: usize,
    hidden: usize,
    classes: Vec<u32>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Gradients shaped like [`PlasticHead`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrad {
    pub loss: f64,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

struct Forward {
    pre: Vec<f64>,
    act: Vec<f64>,
    logits: Vec<f64>,
}

impl PlasticHead {
    /// He-scaled Gaussian hidden weights, zero biases, no output rows.
    pub fn new<R: Rng>(dim: usize, hidden: usize, rng: &mut R) -> Self {
        let scale = (2.0 / dim as f64).sqrt();
        let w1 = (0..hidden * dim)
            .map(|_| {
                let e: f64 = StandardNormal.sample(rng);
                scale * e
            })
            .collect();
        Self {
            dim,
            hidden,
            classes: Vec::new(),
            w1,
            b1: vec![0.0; hidden],
            w2: Vec::new(),
            b2: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn classes(&self) -> &[u32] {
        &self.classes
    }

    pub fn ensure_class(&mut self, class: u32) -> usize {
        match self.classes.binary_search(&class) {
            Ok(i) => i,
            Err(i) => {
                self.classes.insert(i, class);
                let at = i * self.hidden;
                self.w2.splice(at..at, std::iter::repeat_n(0.0, self.hidden));
                self.b2.insert(i, 0.0);
                i
            }
        }
    }

    fn forward(&self, z: &[f64]) -> Forward {
        let pre: Vec<f64> = self
            .w1
            .chunks_exact(self.dim)
            .zip(&self.b1)
            .map(|(w, b)| w.iter().zip(z).map(|(a, x)| a * x).sum::<f64>() + b)
            .collect();
        let act: Vec<f64> = pre.iter().map(|&v| v.max(0.0)).collect();
        let logits = self
            .w2
            .chunks_exact(self.hidden.max(1))
            .zip(&self.b2)
            .map(|(w, b)| w.iter().zip(&act).map(|(a, h)| a * h).sum::<f64>() + b)
            .collect();
        Forward { pre, act, logits }
    }

    pub fn logits(&self, z: &[f64]) -> Vec<f64> {
        self.forward(z).logits
    }

    /// Mean soft-label cross-entropy with exact gradients through the
    /// softmax and the rectifier (derivative 0 at 0).
    pub fn loss_grad(&self, batch: &[(&[f64], &SoftLabel)]) -> Result<HeadGrad> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let (d, h, k) = (self.dim, self.hidden, self.classes.len());
        let mut g = HeadGrad {
            loss: 0.0,
            w1: vec![0.0; h * d],
            b1: vec![0.0; h],
            w2: vec![0.0; k * h],
            b2: vec![0.0; k],
        };
        let scale = 1.0 / batch.len() as f64;
        let mut target = vec![0.0; k];
        for &(z, label) in batch {
            if z.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: z.len() });
            }
            target.iter_mut().for_each(|t| *t = 0.0);
            for &(c, w) in label {
                target[self.classes.binary_search(&c).map_err(|_| Error::UnknownClass(c))?] += w;
            }
            let mass: f64 = target.iter().sum();
            let f = self.forward(z);
            let logp = log_softmax(&f.logits);
            let mut dpre = vec![0.0; h];
            for row in 0..k {
                g.loss -= target[row] * logp[row] * scale;
                let dl = (mass * logp[row].exp() - target[row]) * scale;
                g.b2[row] += dl;
                let w2row = &self.w2[row * h..(row + 1) * h];
                for j in 0..h {
                    g.w2[row * h + j] += dl * f.act[j];
                    dpre[j] += dl * w2row[j];
                }
            }
            for j in 0..h {
                if f.pre[j] > 0.0 {
                    g.b1[j] += dpre[j];
                    for (gw, x) in g.w1[j * d..(j + 1) * d].iter_mut().zip(z) {
                        *gw += dpre[j] * x;
                    }
                }
            }
        }
        Ok(g)
    }

    pub fn apply(&mut self, g: &HeadGrad, lr: f64) {
        for (p, d) in [
            (&mut self.w1, &g.w1),
            (&mut self.b1, &g.b1),
            (&mut self.w2, &g.w2),
            (&mut self.b2, &g.b2),
        ] {
            for (x, dx) in p.iter_mut().zip(d) {
                *x -= lr * dx;
            }
        }
    }

    fn write(&self, w: &mut Writer) {
        w.bytes(HEAD_MAGIC);
        w.u32(VERSION);
        w.u32(self.dim as u32);
        w.u32(self.hidden as u32);
        w.u32(self.classes.len() as u32);
        for &c in &self.classes {
            w.u32(c);
        }
        for p in [&self.w1, &self.b1, &self.w2, &self.b2] {
            w.f64s(p);
        }
    }

    fn read(r: &mut Reader<'_>) -> Result<Self> {
        r.header(HEAD_MAGIC, VERSION)?;
        let dim = r.u32()? as usize;
        let hidden = r.u32()? as usize;
        let k = r.u32()? as usize;
        let classes = (0..k).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        if classes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(r.err("class ids not strictly ascending"));
        }
        Ok(Self {
            dim,
            hidden,
            classes,
            w1: r.f64s(hidden * dim)?,
            b1: r.f64s(hidden)?,
            w2: r.f64s(k * hidden)?,
            b2: r.f64s(k)?,
        })
    }
}

impl Classifier for PlasticHead {
    fn scores(&self, z: &[f32]) -> Result<Vec<(u32, f64)>> {
        check_input(z, self.dim)?;
        if self.classes.is_empty() {
            return Err(Error::NoTrainedClasses);
        }
        Ok(self.classes.iter().copied().zip(self.logits(&widen(z))).collect())
    }
}

fn mix_labels(a: &SoftLabel, b: &SoftLabel, lambda: f64) -> SoftLabel {
    let mut out: SoftLabel = Vec::with_capacity(a.len() + b.len());
    for (src, w) in [(a, lambda), (b, 1.0 - lambda)] {
        for &(c, p) in src {
            let p = w * p;
            if p == 0.0 {
                continue;
            }
            match out.iter_mut().find(|(oc, _)| *oc == c) {
                Some(e) => e.1 += p,
                None => out.push((c, p)),
            }
        }
    }
    out.sort_by_key(|&(c, _)| c);
    out
}

/// Mix one pair with weight `lambda`, producing both complementary blends:
/// `λa + (1−λ)b` first, then `(1−λ)a + λb`.
pub fn mix_pair(
    a: &(Vec<f64>, SoftLabel),
    b: &(Vec<f64>, SoftLabel),
    lambda: f64,
) -> [(Vec<f64>, SoftLabel); 2] {
    let blend = |l: f64| -> (Vec<f64>, SoftLabel) {
        let v = a.0.iter().zip(&b.0).map(|(x, y)| l * x + (1.0 - l) * y).collect();
        (v, mix_labels(&a.1, &b.1, l))
    };
    [blend(lambda), blend(1.0 - lambda)]
}

/// Random pairing without replacement; each pair is blended with
/// λ ~ Beta(alpha, alpha). An odd leftover passes through unchanged.
pub fn mixup_batch<R: Rng>(
    items: &[(Vec<f64>, SoftLabel)],
    alpha: f64,
    rng: &mut R,
) -> Result<Vec<(Vec<f64>, SoftLabel)>> {
    if !(alpha > 0.0) {
        return Err(Error::invalid("mixup alpha must be positive"));
    }
    if items.len() < 2 {
        return Err(Error::invalid("mixup needs at least two items"));
    }
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::invalid(e.to_string()))?;
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(rng);
    let mut out = Vec::with_capacity(items.len());
    for pair in order.chunks(2) {
        match *pair {
            [i, j] => {
                let lambda: f64 = beta.sample(rng);
                out.extend(mix_pair(&items[i], &items[j], lambda));
            }
            [i] => out.push(items[i].clone()),
            _ => unreachable!(),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemindConfig {
    pub pq: PqParams,
    pub capacity: usize,
    pub hidden: usize,
    pub mixup_alpha: f64,
    pub replay_count: usize,
    pub learning_rate: f64,
    pub warm_epochs: usize,
    pub warm_batch_size: usize,
    pub seed: u64,
}

impl Default for RemindConfig {
    fn default() -> Self {
        Self {
            pq: PqParams::default(),
            capacity: DEFAULT_CAPACITY,
            hidden: DEFAULT_HIDDEN,
            mixup_alpha: DEFAULT_MIXUP_ALPHA,
            replay_count: 50,
            learning_rate: 0.1,
            warm_epochs: 10,
            warm_batch_size: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RemindState {
    pub pq: PqModel,
    pub buffer: ReplayBuffer<PqCode>,
    pub head: PlasticHead,
    pub mixup_alpha: f64,
    pub replay_count: usize,
    pub learning_rate: f64,
    rng: ChaCha8Rng,
}

impl RemindState {
    /// Train PQ on the pre-train set, fill the buffer with its codes, and
    /// optionally warm-train the head on the reconstructions.
    pub fn init(pretrain: &FeatureDataset, cfg: &RemindConfig) -> Result<Self> {
        if pretrain.is_empty() {
            return Err(Error::invalid("empty pre-train set"));
        }
        if cfg.capacity == 0 {
            return Err(Error::invalid("buffer capacity must be positive"));
        }
        let vectors: Vec<&[f32]> = pretrain.iter().map(|(_, v)| v).collect();
        let pq = PqModel::train(&vectors, &cfg.pq, derive_seed(cfg.seed, "pq"))?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "learner"));
        let mut head_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "head"));
        let mut head = PlasticHead::new(pretrain.dim(), cfg.hidden, &mut head_rng);
        let mut buffer = ReplayBuffer::new(cfg.capacity);
        let mut codes = Vec::with_capacity(pretrain.len());
        for (label, v) in pretrain.iter() {
            let code = pq.encode(v)?;
            codes.push((code.clone(), label));
            buffer.insert(code, label, &mut rng)?;
            head.ensure_class(label);
        }
        if cfg.warm_epochs > 0 {
            let recon: Vec<(Vec<f64>, SoftLabel)> = codes
                .iter()
                .map(|(c, l)| Ok((widen(&pq.decode(c)?), one_hot(*l))))
                .collect::<Result<_>>()?;
            let mut warm_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "warm"));
            let mut order: Vec<usize> = (0..recon.len()).collect();
            for _ in 0..cfg.warm_epochs {
                order.shuffle(&mut warm_rng);
                for chunk in order.chunks(cfg.warm_batch_size.max(1)) {
                    let batch: Vec<(&[f64], &SoftLabel)> =
                        chunk.iter().map(|&i| (recon[i].0.as_slice(), &recon[i].1)).collect();
                    let g = head.loss_grad(&batch)?;
                    head.apply(&g, cfg.learning_rate);
                }
            }
        }
        Ok(Self {
            pq,
            buffer,
            head,
            mixup_alpha: cfg.mixup_alpha,
            replay_count: cfg.replay_count,
            learning_rate: cfg.learning_rate,
            rng,
        })
    }

    /// One online update: the new example (never mixed) plus up to
    /// `replay_count` decoded replay samples, then store the new code.
    /// Returns the batch size used.
    pub fn step(&mut self, z: &[f32], label: u32) -> Result<usize> {
        check_input(z, self.head.dim())?;
        self.head.ensure_class(label);
        let replayed: Vec<(Vec<f64>, SoftLabel)> = self
            .buffer
            .sample(self.replay_count, &mut self.rng)
            .into_iter()
            .map(|(c, l)| Ok((widen(&self.pq.decode(c)?), one_hot(l))))
            .collect::<Result<_>>()?;
        let replayed = if self.mixup_alpha > 0.0 && replayed.len() >= 2 {
            mixup_batch(&replayed, self.mixup_alpha, &mut self.rng)?
        } else {
            replayed
        };
        let current = (widen(z), one_hot(label));
        let batch: Vec<(&[f64], &SoftLabel)> = std::iter::once(&current)
            .chain(&replayed)
            .map(|(v, l)| (v.as_slice(), l))
            .collect();
        let g = self.head.loss_grad(&batch)?;
        self.head.apply(&g, self.learning_rate);
        let code = self.pq.encode(z)?;
        self.buffer.insert(code, label, &mut self.rng)?;
        Ok(batch.len())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::header(STATE_MAGIC, VERSION);
        w.f64(self.mixup_alpha);
        w.u64(self.replay_count as u64);
        w.f64(self.learning_rate);
        w.rng(&self.rng);
        self.pq.write(&mut w);
        self.head.write(&mut w);
        w.bytes(&self.buffer.to_bytes());
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.header(STATE_MAGIC, VERSION)?;
        let mixup_alpha = r.f64()?;
        let replay_count = r.len_u64()?;
        let learning_rate = r.f64()?;
        let rng = r.rng()?;
        let pq = PqModel::read(&mut r)?;
        let head = PlasticHead::read(&mut r)?;
        let buffer = ReplayBuffer::read_from(&mut r)?;
        r.finish()?;
        Ok(Self {
            pq,
            buffer,
            head,
            mixup_alpha,
            replay_count,
            learning_rate,
            rng,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

impl Classifier for RemindState {
    fn scores(&self, z: &[f32]) -> Result<Vec<(u32, f64)>> {
        self.head.scores(z)
    }
}

impl OnlineLearner for RemindState {
    fn learn(&mut self, z: &[f32], label: u32) -> Result<()> {
        self.step(z, label).map(|_| ())
    }

    fn known_classes(&self) -> Vec<u32> {
        self.head.classes().to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_io::{gen_synthetic_gaussian, SyntheticSpec};

    fn data() -> FeatureDataset {
        gen_synthetic_gaussian(&SyntheticSpec {
            num_classes: 2,
            dim: 8,
            examples_per_class: 5,
            class_separation: 3.0,
            noise_scale: 1.0,
            seed: 1,
        })
        .unwrap()
    }

    fn cfg() -> RemindConfig {
        RemindConfig {
            pq: PqParams { num_subspaces: 4, codebook_size: 4, ..PqParams::default() },
            capacity: 100,
            hidden: 6,
            warm_epochs: 2,
            ..RemindConfig::default()
        }
    }

    #[test]
    fn buffer_holds_every_pretrain_code() {
        let s = RemindState::init(&data(), &cfg()).unwrap();
        assert_eq!(s.buffer.len(), 10);
        assert_eq!(s.head.classes(), &[0, 1]);
    }

    #[test]
    fn zero_capacity_and_empty_pretrain_rejected() {
        let c = RemindConfig { capacity: 0, ..cfg() };
        assert!(RemindState::init(&data(), &c).is_err());
        assert!(RemindState::init(&FeatureDataset::new(8, 2).unwrap(), &cfg()).is_err());
    }

    #[test]
    fn forced_lambda_one_returns_first() {
        let a = (vec![1.0, 2.0], one_hot(0));
        let b = (vec![-3.0, 5.0], one_hot(1));
        let [first, second] = mix_pair(&a, &b, 1.0);
        assert_eq!(first, a);
        assert_eq!(second, b);
    }

    #[test]
    fn identical_pair_is_fixed_point() {
        let a = (vec![0.25, -1.5], one_hot(3));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let lambda: f64 = rng.random();
            for (v, l) in mix_pair(&a, &a, lambda) {
                for (x, y) in v.iter().zip(&a.0) {
                    assert!((x - y).abs() < 1e-15);
                }
                assert_eq!(l.len(), 1);
                assert_eq!(l[0].0, 3);
                assert!((l[0].1 - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn mixup_soft_labels_are_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let items: Vec<(Vec<f64>, SoftLabel)> =
            (0..7).map(|i| (vec![i as f64; 3], one_hot(i % 3))).collect();
        let out = mixup_batch(&items, 0.4, &mut rng).unwrap();
        assert_eq!(out.len(), 7);
        for (_, l) in &out {
            assert!(l.iter().all(|&(_, p)| p >= 0.0));
            assert!((l.iter().map(|&(_, p)| p).sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(mixup_batch(&items[..1], 0.4, &mut rng).is_err());
        assert!(mixup_batch(&items, 0.0, &mut rng).is_err());
    }

    #[test]
    fn uniform_output_gives_ln_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut h = PlasticHead::new(4, 3, &mut rng);
        for c in 0..5 {
            h.ensure_class(c);
        }
        let z = [1.0, -1.0, 0.5, 2.0];
        let g = h.loss_grad(&[(&z, &one_hot(2))]).unwrap();
        assert!((g.loss - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn degenerate_zero_hidden_weights_have_finite_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut h = PlasticHead::new(4, 3, &mut rng);
        h.w1.iter_mut().for_each(|w| *w = 0.0);
        h.ensure_class(0);
        h.ensure_class(1);
        let g = h.loss_grad(&[(&[1.0, 2.0, 3.0, 4.0], &one_hot(1))]).unwrap();
        assert!([&g.w1, &g.b1, &g.w2, &g.b2].iter().all(|p| p.iter().all(|x| x.is_finite())));
    }

    #[test]
    fn empty_buffer_step_is_single_example() {
        let mut s = RemindState::init(&data(), &cfg()).unwrap();
        s.buffer = ReplayBuffer::new(10);
        assert_eq!(s.step(&[0.5; 8], 1).unwrap(), 1);
        assert_eq!(s.buffer.len(), 1);
    }

    #[test]
    fn no_replay_no_mixup_is_plain_sgd() {
        let mut s = RemindState::init(&data(), &cfg()).unwrap();
        s.replay_count = 0;
        s.mixup_alpha = 0.0;
        let mut head = s.head.clone();
        for (label, z) in data().iter() {
            s.step(z, label).unwrap();
            let x = widen(z);
            let g = head.loss_grad(&[(&x, &one_hot(label))]).unwrap();
            head.apply(&g, s.learning_rate);
        }
        assert_eq!(s.head, head);
    }

    #[test]
    fn prediction_ignores_buffer() {
        let mut s = RemindState::init(&data(), &cfg()).unwrap();
        let z = [0.3f32; 8];
        let before = s.predict(&z).unwrap();
        s.buffer = ReplayBuffer::new(1);
        assert_eq!(s.predict(&z).unwrap(), before);
    }

    #[test]
    fn snapshot_resumes_identically() {
        let mut a = RemindState::init(&data(), &cfg()).unwrap();
        let mut b = RemindState::from_bytes(&a.to_bytes()).unwrap();
        for (label, z) in data().iter() {
            a.step(z, label).unwrap();
            b.step(z, label).unwrap();
        }
        assert_eq!(a.to_bytes(), b.to_bytes());
    }
}
