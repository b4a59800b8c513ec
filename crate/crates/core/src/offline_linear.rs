//! Offline linear evaluation: minibatch SGD softmax on frozen features, and
//! top-k accuracy for any classifier.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::feature_io::FeatureDataset;
use crate::learner::{ranked, widen, Classifier};
use crate::replay_softmax::SoftmaxHead;

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Epoch indices (counted from 0) at which the rate is divided.
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for OfflineTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 256,
            learning_rate: 0.1,
            decay_epochs: vec![60, 80],
            decay_factor: 10.0,
            weight_decay: 1e-5,
            seed: 0,
        }
    }
}

impl OfflineTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if self.decay_epochs.iter().any(|&e| e < 1 || e > self.epochs) {
            return Err(Error::invalid("decay epochs must lie in [1, epochs]"));
        }
        if !(self.learning_rate > 0.0 && self.decay_factor > 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::invalid("rates must be positive"));
        }
        Ok(())
    }

    /// Step size used during epoch `epoch` (0-based).
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let decays = self.decay_epochs.iter().filter(|&&d| d <= epoch).count();
        self.learning_rate / self.decay_factor.powi(decays as i32)
    }
}

fn as_f64(ds: &FeatureDataset) -> Vec<Vec<f64>> {
    ds.iter().map(|(_, v)| widen(v)).collect()
}

/// Mean cross-entropy of `head` over `ds` (no regularizer).
pub fn mean_loss(head: &SoftmaxHead, ds: &FeatureDataset) -> Result<f64> {
    let xs = as_f64(ds);
    let batch: Vec<(&[f64], u32)> = xs.iter().map(Vec::as_slice).zip(ds.labels().iter().copied()).collect();
    Ok(head.loss_grad(&batch)?.loss)
}

pub fn train_linear_offline(train: &FeatureDataset, cfg: &OfflineTrainConfig) -> Result<SoftmaxHead> {
    train_linear_offline_with(train, cfg, |_, _| {})
}

/// Like [`train_linear_offline`], calling `on_epoch(epoch, &head)` after
/// each epoch.
pub fn train_linear_offline_with(
    train: &FeatureDataset,
    cfg: &OfflineTrainConfig,
    mut on_epoch: impl FnMut(usize, &SoftmaxHead),
) -> Result<SoftmaxHead> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let mut head = SoftmaxHead::new(train.dim(), cfg.learning_rate);
    for c in train.present_classes() {
        head.ensure_class(c);
    }
    let xs = as_f64(train);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&[f64], u32)> =
                chunk.iter().map(|&i| (xs[i].as_slice(), train.label(i))).collect();
            let mut g = head.loss_grad(&batch)?;
            for (gw, w) in g.grad_w.iter_mut().zip(head.weights()) {
                *gw += cfg.weight_decay * w;
            }
            head.apply(&g, lr);
        }
        on_epoch(epoch, &head);
    }
    Ok(head)
}

/// Fraction of examples whose label is among the `k` best-scoring classes.
/// With `classes`, only examples carrying one of those labels are counted.
pub fn evaluate_topk(
    model: &(impl Classifier + ?Sized),
    eval: &FeatureDataset,
    k: usize,
    classes: Option<&BTreeSet<u32>>,
) -> Result<f64> {
    Ok(evaluate_topks(model, eval, &[k], classes)?[0])
}

/// Top-k accuracy for several `k` in one pass.
pub fn evaluate_topks(
    model: &(impl Classifier + ?Sized),
    eval: &FeatureDataset,
    ks: &[usize],
    classes: Option<&BTreeSet<u32>>,
) -> Result<Vec<f64>> {
    if ks.contains(&0) {
        return Err(Error::invalid("k must be >= 1"));
    }
    let mut hits = vec![0usize; ks.len()];
    let mut n = 0usize;
    for (label, z) in eval.iter() {
        if classes.is_some_and(|c| !c.contains(&label)) {
            continue;
        }
        n += 1;
        let order = ranked(&model.scores(z)?);
        if let Some(rank) = order.iter().position(|&c| c == label) {
            for (h, &k) in hits.iter_mut().zip(ks) {
                if rank < k {
                    *h += 1;
                }
            }
        }
    }
    if n == 0 {
        return Err(Error::invalid("empty evaluation set"));
    }
    Ok(hits.into_iter().map(|h| h as f64 / n as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_io::{gen_synthetic_gaussian, SyntheticSpec};

    /// Scores taken from a fixed table keyed by the first coordinate.
    struct Table(Vec<Vec<(u32, f64)>>);

    impl Classifier for Table {
        fn scores(&self, z: &[f32]) -> Result<Vec<(u32, f64)>> {
            Ok(self.0[z[0] as usize].clone())
        }
    }

    fn table_fixture() -> (Table, FeatureDataset) {
        let t = Table(vec![
            vec![(0, 0.9), (1, 0.5), (2, 0.1)], // label 2: rank 2
            vec![(0, 0.2), (1, 0.7), (2, 0.4)], // label 2: rank 1
            vec![(0, 0.3), (1, 0.3), (2, 0.3)], // label 1: tie -> order 0,1,2 -> rank 1
            vec![(0, 0.1), (1, 0.2), (2, 0.8)], // label 2: rank 0
        ]);
        let mut ds = FeatureDataset::new(1, 3).unwrap();
        for (i, l) in [2u32, 2, 1, 2].into_iter().enumerate() {
            ds.push(l, &[i as f32]).unwrap();
        }
        (t, ds)
    }

    #[test]
    fn hand_counted_top2() {
        let (t, ds) = table_fixture();
        assert_eq!(evaluate_topk(&t, &ds, 1, None).unwrap(), 0.25);
        assert_eq!(evaluate_topk(&t, &ds, 2, None).unwrap(), 0.75);
        assert_eq!(evaluate_topk(&t, &ds, 3, None).unwrap(), 1.0);
        let only1 = BTreeSet::from([1]);
        assert_eq!(evaluate_topk(&t, &ds, 2, Some(&only1)).unwrap(), 1.0);
        let none = BTreeSet::from([0]);
        assert!(evaluate_topk(&t, &ds, 1, Some(&none)).is_err());
    }

    #[test]
    fn schedule_defaults() {
        let c = OfflineTrainConfig::default();
        assert_eq!(c.learning_rate_at(0), 0.1);
        assert_eq!(c.learning_rate_at(59), 0.1);
        assert!((c.learning_rate_at(70) - 0.01).abs() < 1e-15);
        assert!((c.learning_rate_at(90) - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn bad_configs_rejected() {
        let ds = gen_synthetic_gaussian(&SyntheticSpec {
            num_classes: 2,
            dim: 2,
            examples_per_class: 3,
            class_separation: 1.0,
            noise_scale: 1.0,
            seed: 0,
        })
        .unwrap();
        let zero_batch = OfflineTrainConfig { batch_size: 0, ..Default::default() };
        assert!(train_linear_offline(&ds, &zero_batch).is_err());
        let late = OfflineTrainConfig { epochs: 10, decay_epochs: vec![60], ..Default::default() };
        assert!(train_linear_offline(&ds, &late).is_err());
        let empty = FeatureDataset::new(2, 2).unwrap();
        assert!(train_linear_offline(&empty, &OfflineTrainConfig::default()).is_err());
    }
}
