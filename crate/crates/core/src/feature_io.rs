//! Embedding datasets: the FSET binary format and a seeded synthetic
//! Gaussian generator.
//!
//! FSET layout (little-endian, no padding):
//!
//! | field       | width            |
//! |-------------|------------------|
//! | magic       | 4 bytes `FSET`   |
//! | version     | u32 (= 1)        |
//! | n_examples  | u32              |
//! | dim         | u32              |
//! | num_classes | u32              |
//! | records     | n × (u32 label + dim × f32) |

use std::collections::BTreeSet;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::binio::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};

pub const FSET_MAGIC: &[u8; 4] = b"FSET";
pub const FSET_VERSION: u32 = 1;
pub const FSET_HEADER_LEN: usize = 20;

/// Labeled embedding vectors stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    dim: usize,
    num_classes: usize,
    labels: Vec<u32>,
    data: Vec<f32>,
}

impl FeatureDataset {
    pub fn new(dim: usize, num_classes: usize) -> Result<Self> {
        if dim == 0 || num_classes == 0 {
            return Err(Error::invalid("dim and num_classes must be positive"));
        }
        Ok(Self {
            dim,
            num_classes,
            labels: Vec::new(),
            data: Vec::new(),
        })
    }

    pub fn push(&mut self, label: u32, vector: &[f32]) -> Result<()> {
        crate::learner::check_input(vector, self.dim)?;
        if label as usize >= self.num_classes {
            return Err(Error::invalid(format!(
                "label {label} >= num_classes {}",
                self.num_classes
            )));
        }
        self.labels.push(label);
        self.data.extend_from_slice(vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, i: usize) -> u32 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &[f32])> + '_ {
        self.labels.iter().copied().zip(self.data.chunks_exact(self.dim))
    }

    /// Examples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut out = Self {
            dim: self.dim,
            num_classes: self.num_classes,
            labels: Vec::with_capacity(indices.len()),
            data: Vec::with_capacity(indices.len() * self.dim),
        };
        for &i in indices {
            out.labels.push(self.labels[i]);
            out.data.extend_from_slice(self.vector(i));
        }
        out
    }

    /// Examples whose label is in `classes`, preserving stored order.
    pub fn filter_classes(&self, classes: &BTreeSet<u32>) -> Self {
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| classes.contains(&self.labels[i]))
            .collect();
        self.select(&idx)
    }

    /// Class ids that have at least one example.
    pub fn present_classes(&self) -> BTreeSet<u32> {
        self.labels.iter().copied().collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::header(FSET_MAGIC, FSET_VERSION);
        w.u32(self.len() as u32);
        w.u32(self.dim as u32);
        w.u32(self.num_classes as u32);
        for (label, v) in self.iter() {
            w.u32(label);
            for &x in v {
                w.f32(x);
            }
        }
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.header(FSET_MAGIC, FSET_VERSION)?;
        let n = r.u32()? as usize;
        let dim_off = r.offset();
        let dim = r.u32()? as usize;
        let num_classes = r.u32()? as usize;
        if dim == 0 || num_classes == 0 {
            return Err(Error::Format {
                offset: dim_off,
                msg: "dim and num_classes must be positive".into(),
            });
        }
        let expected = (4 + 4 * dim)
            .checked_mul(n)
            .and_then(|b| b.checked_add(FSET_HEADER_LEN))
            .ok_or_else(|| r.err("length overflow"))?;
        if bytes.len() < expected {
            return Err(Error::Format {
                offset: bytes.len(),
                msg: "truncated payload".into(),
            });
        }
        let mut labels = Vec::with_capacity(n);
        let mut data = Vec::with_capacity(n * dim);
        for _ in 0..n {
            let off = r.offset();
            let label = r.u32()?;
            if label as usize >= num_classes {
                return Err(Error::Format {
                    offset: off,
                    msg: format!("label {label} >= num_classes {num_classes}"),
                });
            }
            labels.push(label);
            for _ in 0..dim {
                let off = r.offset();
                let x = r.f32()?;
                if !x.is_finite() {
                    return Err(Error::Format {
                        offset: off,
                        msg: "non-finite float".into(),
                    });
                }
                data.push(x);
            }
        }
        r.finish()?;
        Ok(Self {
            dim,
            num_classes,
            labels,
            data,
        })
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<FeatureDataset> {
    FeatureDataset::from_bytes(&read_file(path.as_ref())?)
}

pub fn save_dataset(ds: &FeatureDataset, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &ds.to_bytes())
}

/// Parameters of the isotropic Gaussian class-mixture generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub examples_per_class: usize,
    pub class_separation: f64,
    pub noise_scale: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.dim == 0 || self.examples_per_class == 0 {
            return Err(Error::invalid(
                "num_classes, dim and examples_per_class must be positive",
            ));
        }
        for (name, v) in [
            ("class_separation", self.class_separation),
            ("noise_scale", self.noise_scale),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    /// Class means: `class_separation` times a seeded random unit vector.
    pub fn class_means(&self) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.num_classes)
            .map(|_| loop {
                let u: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 1e-12 {
                    break u.iter().map(|x| self.class_separation * x / norm).collect();
                }
            })
            .collect()
    }
}

/// Each class draws its noise from its own ChaCha stream, so sample `i` of a
/// class does not depend on how many samples are requested in total.
fn class_rng(seed: u64, class: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(class as u64 + 1);
    rng
}

fn generate(spec: &SyntheticSpec, skip: usize, take: usize) -> Result<FeatureDataset> {
    spec.validate()?;
    let means = spec.class_means();
    let mut ds = FeatureDataset::new(spec.dim, spec.num_classes)?;
    let mut v = vec![0f32; spec.dim];
    for (k, mean) in means.iter().enumerate() {
        let mut rng = class_rng(spec.seed, k);
        for i in 0..skip + take {
            for (out, &m) in v.iter_mut().zip(mean) {
                let e: f64 = StandardNormal.sample(&mut rng);
                *out = (m + spec.noise_scale * e) as f32;
            }
            if i >= skip {
                ds.push(k as u32, &v)?;
            }
        }
    }
    Ok(ds)
}

/// `examples_per_class` samples per class, stored class by class.
pub fn gen_synthetic_gaussian(spec: &SyntheticSpec) -> Result<FeatureDataset> {
    generate(spec, 0, spec.examples_per_class)
}

/// A held-out draw from the same class means: the `per_class` samples that
/// follow the training samples in each class's noise stream.
pub fn gen_synthetic_holdout(spec: &SyntheticSpec, per_class: usize) -> Result<FeatureDataset> {
    if per_class == 0 {
        return Err(Error::invalid("holdout size must be positive"));
    }
    generate(spec, spec.examples_per_class, per_class)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SyntheticSpec {
        SyntheticSpec {
            num_classes: 3,
            dim: 4,
            examples_per_class: 5,
            class_separation: 3.0,
            noise_scale: 0.5,
            seed: 11,
        }
    }

    #[test]
    fn empty_dataset_is_header_only() {
        let ds = FeatureDataset::new(8, 3).unwrap();
        let bytes = ds.to_bytes();
        assert_eq!(bytes.len(), FSET_HEADER_LEN);
        let back = FeatureDataset::from_bytes(&bytes).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.dim(), 8);
        assert_eq!(back.num_classes(), 3);
    }

    #[test]
    fn single_example_size() {
        let mut ds = FeatureDataset::new(2, 1).unwrap();
        ds.push(0, &[1.0, -2.0]).unwrap();
        assert_eq!(ds.to_bytes().len(), 20 + 4 + 8);
    }

    #[test]
    fn truncated_mid_vector() {
        let ds = gen_synthetic_gaussian(&spec()).unwrap();
        let bytes = ds.to_bytes();
        // Cut inside the second record's vector.
        let cut = FSET_HEADER_LEN + (4 + 16) + 4 + 6;
        match FeatureDataset::from_bytes(&bytes[..cut]) {
            Err(e @ Error::Format { .. }) => {
                assert_eq!(e.to_string(), format!("truncated payload at offset {cut}"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_bad_header_and_trailing_bytes() {
        let ds = gen_synthetic_gaussian(&spec()).unwrap();
        let mut bytes = ds.to_bytes();
        bytes.push(0);
        assert!(matches!(
            FeatureDataset::from_bytes(&bytes),
            Err(Error::Format { offset, .. }) if offset == bytes.len() - 1
        ));
        let mut bad = ds.to_bytes();
        bad[0] = b'X';
        assert!(matches!(FeatureDataset::from_bytes(&bad), Err(Error::Format { offset: 0, .. })));
        let mut ver = ds.to_bytes();
        ver[4] = 2;
        assert!(matches!(FeatureDataset::from_bytes(&ver), Err(Error::Format { offset: 4, .. })));
    }

    #[test]
    fn rejects_bad_label_and_nan() {
        let mut ds = FeatureDataset::new(1, 2).unwrap();
        ds.push(1, &[0.5]).unwrap();
        let mut bytes = ds.to_bytes();
        bytes[20] = 2;
        assert!(matches!(FeatureDataset::from_bytes(&bytes), Err(Error::Format { offset: 20, .. })));
        let mut bytes = ds.to_bytes();
        bytes[24..28].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(FeatureDataset::from_bytes(&bytes), Err(Error::Format { offset: 24, .. })));
    }

    #[test]
    fn zero_noise_samples_equal_means() {
        let mut s = spec();
        s.noise_scale = 0.0;
        let ds = gen_synthetic_gaussian(&s).unwrap();
        let means = s.class_means();
        for (label, v) in ds.iter() {
            for (a, b) in v.iter().zip(&means[label as usize]) {
                assert_eq!(*a, *b as f32);
            }
        }
    }

    #[test]
    fn generator_is_deterministic() {
        let a = gen_synthetic_gaussian(&spec()).unwrap();
        let b = gen_synthetic_gaussian(&spec()).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let mut other = spec();
        other.seed = 12;
        assert_ne!(a, gen_synthetic_gaussian(&other).unwrap());
    }

    #[test]
    fn holdout_continues_the_class_streams() {
        let s = spec();
        let mut longer = s.clone();
        longer.examples_per_class = 8;
        let all = gen_synthetic_gaussian(&longer).unwrap();
        let tail = gen_synthetic_holdout(&s, 3).unwrap();
        let expected: Vec<usize> = (0..3).flat_map(|k| (5..8).map(move |i| k * 8 + i)).collect();
        assert_eq!(tail, all.select(&expected));
    }

    #[test]
    fn class_means_have_requested_norm() {
        for m in spec().class_means() {
            let n = m.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 3.0).abs() < 1e-12);
        }
    }
}
