//! Product quantization: one k-means codebook per contiguous sub-block.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::binio::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::replay::Payload;

pub const DEFAULT_SUBSPACES: usize = 32;
pub const DEFAULT_CODEBOOK_SIZE: usize = 256;
const MAGIC: &[u8; 4] = b"PQMD";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PqParams {
    pub num_subspaces: usize,
    pub codebook_size: usize,
    pub max_iters: usize,
    pub rel_tol: f64,
}

impl Default for PqParams {
    fn default() -> Self {
        Self {
            num_subspaces: DEFAULT_SUBSPACES,
            codebook_size: DEFAULT_CODEBOOK_SIZE,
            max_iters: 25,
            rel_tol: 1e-4,
        }
    }
}

/// One byte per sub-block.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PqCode(pub Vec<u8>);

impl Payload for PqCode {
    fn width(&self) -> usize {
        self.0.len()
    }

    fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.0);
    }

    fn read(bytes: &[u8]) -> Self {
        PqCode(bytes.to_vec())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PqModel {
    dim: usize,
    m: usize,
    s: usize,
    /// `m × s × (dim / m)` centroids.
    codebooks: Vec<f32>,
}

/// Per-subspace k-means objective (sum of squared distances) recorded after
/// every assignment step, starting with the initial centroids.
pub type ObjectiveTrace = Vec<Vec<f64>>;

impl PqModel {
    pub fn train(vectors: &[&[f32]], params: &PqParams, seed: u64) -> Result<Self> {
        Self::train_traced(vectors, params, seed).map(|(m, _)| m)
    }

    pub fn train_traced(
        vectors: &[&[f32]],
        params: &PqParams,
        seed: u64,
    ) -> Result<(Self, ObjectiveTrace)> {
        let &PqParams {
            num_subspaces: m,
            codebook_size: s,
            max_iters,
            rel_tol,
        } = params;
        let first = vectors.first().ok_or_else(|| Error::invalid("no training vectors"))?;
        let dim = first.len();
        if m == 0 || dim == 0 || dim % m != 0 {
            return Err(Error::invalid(format!(
                "dim {dim} not divisible by {m} subspaces"
            )));
        }
        if s == 0 || s > 256 {
            return Err(Error::invalid("codebook size must be in 1..=256"));
        }
        for v in vectors {
            crate::learner::check_input(v, dim)?;
        }
        let sub = dim / m;
        let per_block: Vec<(Vec<f64>, Vec<f64>)> = (0..m)
            .into_par_iter()
            .map(|j| {
                let points: Vec<f64> = vectors
                    .iter()
                    .flat_map(|v| v[j * sub..(j + 1) * sub].iter().map(|&x| x as f64))
                    .collect();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(j as u64);
                kmeans(&points, sub, s, max_iters, rel_tol, &mut rng)
            })
            .collect();
        let mut codebooks = Vec::with_capacity(dim * s);
        let mut trace = Vec::with_capacity(m);
        for (c, t) in per_block {
            codebooks.extend(c.into_iter().map(|x| x as f32));
            trace.push(t);
        }
        Ok((Self { dim, m, s, codebooks }, trace))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_subspaces(&self) -> usize {
        self.m
    }

    pub fn codebook_size(&self) -> usize {
        self.s
    }

    pub fn sub_dim(&self) -> usize {
        self.dim / self.m
    }

    pub fn centroid(&self, subspace: usize, index: usize) -> &[f32] {
        let d = self.sub_dim();
        let at = (subspace * self.s + index) * d;
        &self.codebooks[at..at + d]
    }

    /// Nearest centroid per sub-block; ties go to the lowest index.
    pub fn encode(&self, v: &[f32]) -> Result<PqCode> {
        crate::learner::check_input(v, self.dim)?;
        let d = self.sub_dim();
        let code = (0..self.m)
            .map(|j| {
                let slice = &v[j * d..(j + 1) * d];
                let mut best = (0usize, f64::INFINITY);
                for c in 0..self.s {
                    let dist = sq_dist_f32(slice, self.centroid(j, c));
                    if dist < best.1 {
                        best = (c, dist);
                    }
                }
                best.0 as u8
            })
            .collect();
        Ok(PqCode(code))
    }

    pub fn decode(&self, code: &PqCode) -> Result<Vec<f32>> {
        if code.0.len() != self.m {
            return Err(Error::DimensionMismatch {
                expected: self.m,
                got: code.0.len(),
            });
        }
        let mut out = Vec::with_capacity(self.dim);
        for (j, &c) in code.0.iter().enumerate() {
            if c as usize >= self.s {
                return Err(Error::invalid(format!(
                    "code {c} out of range for codebook size {}",
                    self.s
                )));
            }
            out.extend_from_slice(self.centroid(j, c as usize));
        }
        Ok(out)
    }

    /// Mean of ‖v − decode(encode(v))‖².
    pub fn reconstruction_error(&self, vectors: &[&[f32]]) -> Result<f64> {
        if vectors.is_empty() {
            return Err(Error::invalid("no vectors"));
        }
        let mut total = 0.0;
        for v in vectors {
            let r = self.decode(&self.encode(v)?)?;
            total += sq_dist_f32(v, &r);
        }
        Ok(total / vectors.len() as f64)
    }

    pub(crate) fn write(&self, w: &mut Writer) {
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.u32(self.dim as u32);
        w.u32(self.m as u32);
        w.u32(self.s as u32);
        for &c in &self.codebooks {
            w.f32(c);
        }
    }

    pub(crate) fn read(r: &mut Reader<'_>) -> Result<Self> {
        r.header(MAGIC, VERSION)?;
        let dim = r.u32()? as usize;
        let m = r.u32()? as usize;
        let s = r.u32()? as usize;
        if m == 0 || !dim.is_multiple_of(m) || s == 0 || s > 256 {
            return Err(r.err("invalid PQ shape"));
        }
        let mut codebooks = Vec::with_capacity(dim * s);
        for _ in 0..dim * s {
            let x = r.f32()?;
            if !x.is_finite() {
                return Err(r.err("non-finite centroid"));
            }
            codebooks.push(x);
        }
        Ok(Self { dim, m, s, codebooks })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.write(&mut w);
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let m = Self::read(&mut r)?;
        r.finish()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

fn sq_dist_f32(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Returns each point's nearest centroid and the summed squared distance.
fn assign(points: &[f64], d: usize, centroids: &[f64], labels: &mut [usize], dists: &mut [f64]) -> f64 {
    let mut total = 0.0;
    for (i, p) in points.chunks_exact(d).enumerate() {
        let mut best = (0, f64::INFINITY);
        for (c, cent) in centroids.chunks_exact(d).enumerate() {
            let dist = sq_dist(p, cent);
            if dist < best.1 {
                best = (c, dist);
            }
        }
        labels[i] = best.0;
        dists[i] = best.1;
        total += best.1;
    }
    total
}

fn initial_centroids(points: &[f64], d: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut seen = HashSet::new();
    // +0.0 folds -0.0 into 0.0 so equal slices hash equally.
    let distinct: Vec<&[f64]> = points
        .chunks_exact(d)
        .filter(|p| seen.insert(p.iter().map(|x| (x + 0.0).to_bits()).collect::<Vec<_>>()))
        .collect();
    let mut centroids = Vec::with_capacity(k * d);
    if distinct.len() >= k {
        for i in index::sample(rng, distinct.len(), k) {
            centroids.extend_from_slice(distinct[i]);
        }
    } else {
        for p in &distinct {
            centroids.extend_from_slice(p);
        }
        for _ in distinct.len()..k {
            let base = distinct[rng.random_range(0..distinct.len())];
            centroids.extend(
                base.iter()
                    .map(|&x| x + 1e-7 * (1.0 + x.abs()) * rng.random_range(-1.0..1.0)),
            );
        }
    }
    centroids
}

/// Lloyd iterations. Returns the centroids and the objective after each
/// assignment.
fn kmeans(
    points: &[f64],
    d: usize,
    k: usize,
    max_iters: usize,
    rel_tol: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, Vec<f64>) {
    let n = points.len() / d;
    let mut centroids = initial_centroids(points, d, k, rng);
    let mut labels = vec![0; n];
    let mut dists = vec![0.0; n];
    let mut trace = vec![assign(points, d, &centroids, &mut labels, &mut dists)];
    for _ in 0..max_iters {
        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for (i, p) in points.chunks_exact(d).enumerate() {
            counts[labels[i]] += 1;
            for (s, x) in sums[labels[i] * d..(labels[i] + 1) * d].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for (dst, s) in centroids[c * d..(c + 1) * d].iter_mut().zip(&sums[c * d..(c + 1) * d]) {
                    *dst = s / counts[c] as f64;
                }
            }
        }
        let empty: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
        if !empty.is_empty() {
            // Re-seed empty clusters at the points farthest from their
            // (updated) centroids.
            let mut far: Vec<(usize, f64)> = points
                .chunks_exact(d)
                .enumerate()
                .map(|(i, p)| (i, sq_dist(p, &centroids[labels[i] * d..(labels[i] + 1) * d])))
                .collect();
            far.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            for (c, &(i, _)) in empty.into_iter().zip(far.iter().cycle()) {
                let p = &points[i * d..(i + 1) * d];
                centroids[c * d..(c + 1) * d].copy_from_slice(p);
            }
        }
        let prev = *trace.last().unwrap();
        let cur = assign(points, d, &centroids, &mut labels, &mut dists);
        trace.push(cur);
        if prev <= 0.0 || (prev - cur) / prev < rel_tol {
            break;
        }
    }
    (centroids, trace)
}
