//! Common classifier surface shared by every learner.

use crate::error::{Error, Result};
use sha2::{Digest, Sha256};

/// Anything that scores an embedding against its known classes.
pub trait Classifier {
    /// Scores for every known class, in ascending class-id order.
    fn scores(&self, z: &[f32]) -> Result<Vec<(u32, f64)>>;

    /// Highest-scoring class; exact ties go to the lowest class id.
    fn predict(&self, z: &[f32]) -> Result<(u32, Vec<(u32, f64)>)> {
        let scores = self.scores(z)?;
        let label = argmax(&scores).ok_or(Error::NoTrainedClasses)?;
        Ok((label, scores))
    }
}

/// A learner that consumes a stream one labeled example at a time.
pub trait OnlineLearner: Classifier {
    fn learn(&mut self, z: &[f32], label: u32) -> Result<()>;

    /// Known class ids, ascending.
    fn known_classes(&self) -> Vec<u32>;
}

/// Argmax over scores sorted by class id; ties resolve to the first (lowest id).
pub fn argmax(scores: &[(u32, f64)]) -> Option<u32> {
    let mut best: Option<(u32, f64)> = None;
    for &(c, s) in scores {
        match best {
            Some((_, b)) if s <= b => {}
            _ => best = Some((c, s)),
        }
    }
    best.map(|(c, _)| c)
}

/// Class ids ordered by descending score, lowest id first among equal scores.
pub fn ranked(scores: &[(u32, f64)]) -> Vec<u32> {
    let mut v = scores.to_vec();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    v.into_iter().map(|(c, _)| c).collect()
}

pub(crate) fn check_input(z: &[f32], dim: usize) -> Result<()> {
    if z.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: z.len(),
        });
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(())
}

pub(crate) fn widen(z: &[f32]) -> Vec<f64> {
    z.iter().map(|&v| v as f64).collect()
}

/// Derive an independent sub-seed from a master seed and a purpose string.
pub fn derive_seed(master: u64, purpose: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(purpose.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}
