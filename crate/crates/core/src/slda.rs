//! Streaming linear discriminant analysis over fixed embeddings.
//!
//! Per-class running means and one shared covariance. Prediction picks the
//! nearest class Gaussian under the shrinkage-regularized shared covariance,
//! with equal class priors.

use std::path::Path;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::binio::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::feature_io::FeatureDataset;
use crate::learner::{check_input, widen, Classifier, OnlineLearner};

pub const DEFAULT_SHRINKAGE: f64 = 1e-4;
const SNAPSHOT_MAGIC: &[u8; 4] = b"SLDA";
const SNAPSHOT_VERSION: u32 = 1;
/// Largest condition number accepted for the shrunk covariance.
const MAX_CONDITION: f64 = 1e15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovarianceInit {
    Zeros,
    Identity,
}

#[derive(Debug, Clone)]
struct LinearCache {
    precision: DMatrix<f64>,
    /// (class, Λμ, −½ μᵀΛμ) for each trained class.
    rows: Vec<(u32, DVector<f64>, f64)>,
}

#[derive(Debug, Clone)]
pub struct SldaState {
    dim: usize,
    shrinkage: f64,
    covariance_plastic: bool,
    means: Vec<DVector<f64>>,
    counts: Vec<u64>,
    total: u64,
    covariance: DMatrix<f64>,
    cache: OnceLock<LinearCache>,
}

impl SldaState {
    pub fn new(
        dim: usize,
        shrinkage: f64,
        covariance_plastic: bool,
        init: CovarianceInit,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dim must be >= 1"));
        }
        if !(0.0..=1.0).contains(&shrinkage) {
            return Err(Error::invalid("shrinkage must lie in [0, 1]"));
        }
        let covariance = match init {
            CovarianceInit::Zeros => DMatrix::zeros(dim, dim),
            CovarianceInit::Identity => DMatrix::identity(dim, dim),
        };
        Ok(Self {
            dim,
            shrinkage,
            covariance_plastic,
            means: Vec::new(),
            counts: Vec::new(),
            total: 0,
            covariance,
            cache: OnceLock::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shrinkage(&self) -> f64 {
        self.shrinkage
    }

    pub fn total_count(&self) -> u64 {
        self.total
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn class_count(&self, class: u32) -> u64 {
        self.counts.get(class as usize).copied().unwrap_or(0)
    }

    pub fn class_mean(&self, class: u32) -> Option<&DVector<f64>> {
        match self.class_count(class) {
            0 => None,
            _ => Some(&self.means[class as usize]),
        }
    }

    fn ensure_slot(&mut self, class: u32) {
        let need = class as usize + 1;
        if self.means.len() < need {
            self.means.resize(need, DVector::zeros(self.dim));
            self.counts.resize(need, 0);
        }
    }

    /// Initialize from a batch: exact class means and the pooled
    /// (divide-by-n) within-class scatter.
    pub fn fit_base(&mut self, base: &FeatureDataset) -> Result<()> {
        if self.total != 0 {
            return Err(Error::invalid("fit_base requires a fresh state"));
        }
        if base.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: base.dim(),
            });
        }
        if base.is_empty() {
            return Ok(());
        }
        for (label, z) in base.iter() {
            self.ensure_slot(label);
            self.counts[label as usize] += 1;
            self.means[label as usize] += DVector::from_vec(widen(z));
        }
        for (mean, &c) in self.means.iter_mut().zip(&self.counts) {
            if c > 0 {
                *mean /= c as f64;
            }
        }
        let mut scatter = DMatrix::zeros(self.dim, self.dim);
        for (label, z) in base.iter() {
            let d = DVector::from_vec(widen(z)) - &self.means[label as usize];
            add_outer(&mut scatter, &d, 1.0);
        }
        self.total = base.len() as u64;
        self.covariance = scatter / self.total as f64;
        self.cache = OnceLock::new();
        Ok(())
    }

    /// One streaming update. Unknown class ids get a fresh zero slot.
    pub fn update(&mut self, z: &[f32], class: u32) -> Result<()> {
        check_input(z, self.dim)?;
        self.ensure_slot(class);
        let k = class as usize;
        let z = DVector::from_vec(widen(z));
        let c = self.counts[k] as f64;
        let t = self.total as f64;
        if self.covariance_plastic {
            let d = &z - &self.means[k];
            // Pooled within-class scatter recurrence; weight is zero for a
            // class's first sample.
            let w = c / (c + 1.0);
            self.covariance *= t;
            add_outer(&mut self.covariance, &d, w);
            self.covariance /= t + 1.0;
        }
        self.means[k] = (&self.means[k] * c + z) / (c + 1.0);
        self.counts[k] += 1;
        self.total += 1;
        self.cache = OnceLock::new();
        Ok(())
    }

    /// Λ = [(1−ε)Σ + εI]⁻¹, cached until the next update.
    pub fn precision(&self) -> Result<&DMatrix<f64>> {
        Ok(&self.linear()?.precision)
    }

    fn linear(&self) -> Result<&LinearCache> {
        if let Some(c) = self.cache.get() {
            return Ok(c);
        }
        if self.total == 0 {
            return Err(Error::NoTrainedClasses);
        }
        let precision = shrunk_inverse(&self.covariance, self.shrinkage)?;
        let rows = self
            .counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(k, _)| {
                let mu = &self.means[k];
                let w = &precision * mu;
                let b = -0.5 * mu.dot(&w);
                (k as u32, w, b)
            })
            .collect();
        let _ = self.cache.set(LinearCache { precision, rows });
        Ok(self.cache.get().expect("cache just set"))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::header(SNAPSHOT_MAGIC, SNAPSHOT_VERSION);
        w.u32(self.dim as u32);
        w.f64(self.shrinkage);
        w.bool(self.covariance_plastic);
        w.u64(self.total);
        w.u32(self.means.len() as u32);
        for (mean, &c) in self.means.iter().zip(&self.counts) {
            w.u64(c);
            w.f64s(mean.as_slice());
        }
        w.f64s(self.covariance.as_slice());
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.header(SNAPSHOT_MAGIC, SNAPSHOT_VERSION)?;
        let dim = r.u32()? as usize;
        let shrinkage = r.f64()?;
        let covariance_plastic = r.bool()?;
        let total = r.u64()?;
        let slots = r.u32()? as usize;
        let mut means = Vec::with_capacity(slots);
        let mut counts = Vec::with_capacity(slots);
        for _ in 0..slots {
            counts.push(r.u64()?);
            means.push(DVector::from_vec(r.f64s(dim)?));
        }
        let covariance = DMatrix::from_vec(dim, dim, r.f64s(dim * dim)?);
        r.finish()?;
        if counts.iter().sum::<u64>() != total {
            return Err(Error::Format {
                offset: 0,
                msg: "class counts do not sum to total".into(),
            });
        }
        Ok(Self {
            dim,
            shrinkage,
            covariance_plastic,
            means,
            counts,
            total,
            covariance,
            cache: OnceLock::new(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

fn add_outer(m: &mut DMatrix<f64>, d: &DVector<f64>, weight: f64) {
    let n = d.len();
    for j in 0..n {
        for i in 0..n {
            // d_i·d_j is computed before weighting so (i,j) and (j,i) agree bitwise.
            m[(i, j)] += weight * (d[i] * d[j]);
        }
    }
}

fn shrunk_inverse(cov: &DMatrix<f64>, shrinkage: f64) -> Result<DMatrix<f64>> {
    let n = cov.nrows();
    let a = cov * (1.0 - shrinkage) + DMatrix::<f64>::identity(n, n) * shrinkage;
    let condition = |a: &DMatrix<f64>| {
        let eig = SymmetricEigen::new(a.clone()).eigenvalues;
        let max = eig.iter().fold(0f64, |m, v| m.max(v.abs()));
        let min = eig.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        if min == 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    };
    let chol = match a.clone().cholesky() {
        Some(c) => c,
        None => return Err(Error::Singular { condition: condition(&a) }),
    };
    let l = chol.l_dirty();
    let (lmax, lmin) = (0..n).fold((0f64, f64::INFINITY), |(hi, lo), i| {
        (hi.max(l[(i, i)]), lo.min(l[(i, i)]))
    });
    if !(lmin > 0.0) || (lmax / lmin).powi(2) > MAX_CONDITION {
        let c = condition(&a);
        if c > MAX_CONDITION {
            return Err(Error::Singular { condition: c });
        }
    }
    let inv = chol.inverse();
    Ok((&inv + inv.transpose()) * 0.5)
}

impl Classifier for SldaState {
    fn scores(&self, z: &[f32]) -> Result<Vec<(u32, f64)>> {
        check_input(z, self.dim)?;
        let lin = self.linear()?;
        if lin.rows.is_empty() {
            return Err(Error::NoTrainedClasses);
        }
        let z = DVector::from_vec(widen(z));
        Ok(lin.rows.iter().map(|(k, w, b)| (*k, w.dot(&z) + b)).collect())
    }
}

impl OnlineLearner for SldaState {
    fn learn(&mut self, z: &[f32], label: u32) -> Result<()> {
        self.update(z, label)
    }

    fn known_classes(&self) -> Vec<u32> {
        (0..self.counts.len() as u32)
            .filter(|&k| self.counts[k as usize] > 0)
            .collect()
    }
}
