//! Pre-train / continual class split and presentation order.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::feature_io::FeatureDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub pretrain_num_classes: usize,
    pub seed: u64,
}

/// Randomly choose the pre-train classes; the rest form the continual set.
pub fn select_pretrain_classes(
    num_classes: usize,
    spec: &SplitSpec,
) -> Result<(BTreeSet<u32>, BTreeSet<u32>)> {
    if spec.pretrain_num_classes == 0 || spec.pretrain_num_classes >= num_classes {
        return Err(Error::invalid(format!(
            "pretrain_num_classes must be in 1..{num_classes}, got {}",
            spec.pretrain_num_classes
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut all: Vec<u32> = (0..num_classes as u32).collect();
    all.shuffle(&mut rng);
    let pretrain = all[..spec.pretrain_num_classes].iter().copied().collect();
    let continual = all[spec.pretrain_num_classes..].iter().copied().collect();
    Ok((pretrain, continual))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamMode {
    ClassIncremental,
    Iid,
}

impl StreamMode {
    pub fn as_str(self) -> &'static str {
        match self {
            StreamMode::ClassIncremental => "class_incremental",
            StreamMode::Iid => "iid",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "class_incremental" => Ok(StreamMode::ClassIncremental),
            "iid" => Ok(StreamMode::Iid),
            other => Err(Error::invalid(format!("unknown stream mode {other:?}"))),
        }
    }
}

/// Evaluation point: after `position` examples of the stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Checkpoint {
    pub position: usize,
    pub classes_seen: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamPlan {
    pub order: Vec<usize>,
    pub checkpoints: Vec<Checkpoint>,
    pub mode: StreamMode,
}

fn shuffled_class_indices(ds: &FeatureDataset, class: u32, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.label(i) == class).collect();
    idx.shuffle(rng);
    idx
}

/// Pre-train classes first, then continual classes; each class contiguous.
pub fn build_class_incremental_stream(
    ds: &FeatureDataset,
    pretrain_classes: &BTreeSet<u32>,
    seed: u64,
    checkpoint_every: usize,
) -> Result<StreamPlan> {
    if checkpoint_every == 0 {
        return Err(Error::invalid("checkpoint_every must be positive"));
    }
    if let Some(&c) = pretrain_classes.iter().find(|&&c| c as usize >= ds.num_classes()) {
        return Err(Error::invalid(format!("pre-train class {c} not in dataset")));
    }
    let present = ds.present_classes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut first: Vec<u32> = present.intersection(pretrain_classes).copied().collect();
    let mut second: Vec<u32> = present.difference(pretrain_classes).copied().collect();
    first.shuffle(&mut rng);
    second.shuffle(&mut rng);

    let mut order = Vec::with_capacity(ds.len());
    let mut checkpoints = Vec::new();
    let total = first.len() + second.len();
    for (n, class) in first.into_iter().chain(second).enumerate() {
        order.extend(shuffled_class_indices(ds, class, &mut rng));
        let seen = n + 1;
        if seen % checkpoint_every == 0 || seen == total {
            checkpoints.push(Checkpoint {
                position: order.len(),
                classes_seen: seen,
            });
        }
    }
    Ok(StreamPlan {
        order,
        checkpoints,
        mode: StreamMode::ClassIncremental,
    })
}

/// Fully shuffled order with a checkpoint every `checkpoint_every_examples`
/// examples and at the end.
pub fn build_iid_stream(
    ds: &FeatureDataset,
    seed: u64,
    checkpoint_every_examples: usize,
) -> Result<StreamPlan> {
    if checkpoint_every_examples == 0 {
        return Err(Error::invalid("checkpoint interval must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut rng);
    let mut seen = HashSet::new();
    let mut checkpoints = Vec::new();
    for (i, &idx) in order.iter().enumerate() {
        seen.insert(ds.label(idx));
        let pos = i + 1;
        if pos % checkpoint_every_examples == 0 || pos == order.len() {
            checkpoints.push(Checkpoint {
                position: pos,
                classes_seen: seen.len(),
            });
        }
    }
    Ok(StreamPlan {
        order,
        checkpoints,
        mode: StreamMode::Iid,
    })
}

/// True when every label occupies a single contiguous run.
pub fn is_class_contiguous(labels: impl IntoIterator<Item = u32>) -> bool {
    let mut finished = HashSet::new();
    let mut current: Option<u32> = None;
    for l in labels {
        if current == Some(l) {
            continue;
        }
        if finished.contains(&l) {
            return false;
        }
        if let Some(c) = current {
            finished.insert(c);
        }
        current = Some(l);
    }
    true
}

impl StreamPlan {
    pub fn labels<'a>(&'a self, ds: &'a FeatureDataset) -> impl Iterator<Item = u32> + 'a {
        self.order.iter().map(move |&i| ds.label(i))
    }

    pub fn is_permutation_of(&self, n: usize) -> bool {
        let mut sorted = self.order.clone();
        sorted.sort_unstable();
        sorted.len() == n && sorted.iter().enumerate().all(|(i, &v)| i == v)
    }

    /// One index per line with `#checkpoint <classes_seen>` after each
    /// checkpoint position.
    pub fn to_text(&self) -> String {
        let mut out = format!("#mode {}\n", self.mode.as_str());
        let mut cps = self.checkpoints.iter().peekable();
        for (i, idx) in self.order.iter().enumerate() {
            writeln!(out, "{idx}").unwrap();
            while let Some(cp) = cps.next_if(|cp| cp.position == i + 1) {
                writeln!(out, "#checkpoint {}", cp.classes_seen).unwrap();
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut mode = None;
        let mut order = Vec::new();
        let mut checkpoints = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let bad = || Error::invalid(format!("plan line {}: {line:?}", lineno + 1));
            if let Some(rest) = line.strip_prefix("#mode ") {
                mode = Some(StreamMode::parse(rest.trim())?);
            } else if let Some(rest) = line.strip_prefix("#checkpoint ") {
                checkpoints.push(Checkpoint {
                    position: order.len(),
                    classes_seen: rest.trim().parse().map_err(|_| bad())?,
                });
            } else if !line.trim().is_empty() {
                order.push(line.trim().parse().map_err(|_| bad())?);
            }
        }
        Ok(Self {
            order,
            checkpoints,
            mode: mode.ok_or_else(|| Error::invalid("plan missing #mode line"))?,
        })
    }
}
