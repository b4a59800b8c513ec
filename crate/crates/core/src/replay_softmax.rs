//! Online softmax classifier with raw-embedding replay.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::binio::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::learner::{check_input, widen, Classifier, OnlineLearner};
use crate::replay::ReplayBuffer;

pub const DEFAULT_LEARNING_RATE: f64 = 0.1;
pub const DEFAULT_CAPACITY: usize = 735_000;
pub const DEFAULT_REPLAY_COUNT: usize = 50;

const HEAD_MAGIC: &[u8; 4] = b"SMXH";
const LEARNER_MAGIC: &[u8; 4] = b"RSMX";
const VERSION: u32 = 1;

/// Linear softmax classifier whose rows grow as classes appear.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxHead {
    dim: usize,
    /// Ascending; row `i` of `weights` belongs to `classes[i]`.
    classes: Vec<u32>,
    weights: Vec<f64>,
    bias: Vec<f64>,
    pub learning_rate: f64,
}

/// Mean cross-entropy and its gradients, laid out like the head's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad_w: Vec<f64>,
    pub grad_b: Vec<f64>,
}

pub(crate) fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

impl SoftmaxHead {
    pub fn new(dim: usize, learning_rate: f64) -> Self {
        Self {
            dim,
            classes: Vec::new(),
            weights: Vec::new(),
            bias: Vec::new(),
            learning_rate,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> &[u32] {
        &self.classes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn row_of(&self, class: u32) -> Option<usize> {
        self.classes.binary_search(&class).ok()
    }

    /// Add a zero-initialized row for `class` if it is new.
    pub fn ensure_class(&mut self, class: u32) -> usize {
        match self.classes.binary_search(&class) {
            Ok(i) => i,
            Err(i) => {
                self.classes.insert(i, class);
                let at = i * self.dim;
                self.weights.splice(at..at, std::iter::repeat_n(0.0, self.dim));
                self.bias.insert(i, 0.0);
                i
            }
        }
    }

    pub fn logits(&self, z: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.dim)
            .zip(&self.bias)
            .map(|(w, b)| w.iter().zip(z).map(|(a, x)| a * x).sum::<f64>() + b)
            .collect()
    }

    /// Mean cross-entropy over `batch` with exact analytic gradients.
    pub fn loss_grad(&self, batch: &[(&[f64], u32)]) -> Result<LossGrad> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let k = self.classes.len();
        let mut grad_w = vec![0.0; k * self.dim];
        let mut grad_b = vec![0.0; k];
        let mut loss = 0.0;
        let scale = 1.0 / batch.len() as f64;
        for &(z, y) in batch {
            if z.len() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    got: z.len(),
                });
            }
            let target = self.row_of(y).ok_or(Error::UnknownClass(y))?;
            let logp = log_softmax(&self.logits(z));
            loss -= logp[target] * scale;
            for (row, lp) in logp.iter().enumerate() {
                let g = (lp.exp() - if row == target { 1.0 } else { 0.0 }) * scale;
                grad_b[row] += g;
                for (gw, x) in grad_w[row * self.dim..(row + 1) * self.dim].iter_mut().zip(z) {
                    *gw += g * x;
                }
            }
        }
        Ok(LossGrad { loss, grad_w, grad_b })
    }

    /// Plain gradient-descent update.
    pub fn apply(&mut self, g: &LossGrad, lr: f64) {
        for (w, d) in self.weights.iter_mut().zip(&g.grad_w) {
            *w -= lr * d;
        }
        for (b, d) in self.bias.iter_mut().zip(&g.grad_b) {
            *b -= lr * d;
        }
    }

    pub(crate) fn write(&self, w: &mut Writer) {
        w.bytes(HEAD_MAGIC);
        w.u32(VERSION);
        w.u32(self.dim as u32);
        w.f64(self.learning_rate);
        w.u32(self.classes.len() as u32);
        for &c in &self.classes {
            w.u32(c);
        }
        w.f64s(&self.weights);
        w.f64s(&self.bias);
    }

    pub(crate) fn read(r: &mut Reader<'_>) -> Result<Self> {
        r.header(HEAD_MAGIC, VERSION)?;
        let dim = r.u32()? as usize;
        let learning_rate = r.f64()?;
        let k = r.u32()? as usize;
        let classes = (0..k).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        if classes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(r.err("class ids not strictly ascending"));
        }
        let weights = r.f64s(k * dim)?;
        let bias = r.f64s(k)?;
        Ok(Self {
            dim,
            classes,
            weights,
            bias,
            learning_rate,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.write(&mut w);
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let h = Self::read(&mut r)?;
        r.finish()?;
        Ok(h)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

impl Classifier for SoftmaxHead {
    fn scores(&self, z: &[f32]) -> Result<Vec<(u32, f64)>> {
        check_input(z, self.dim)?;
        if self.classes.is_empty() {
            return Err(Error::NoTrainedClasses);
        }
        let logits = self.logits(&widen(z));
        Ok(self.classes.iter().copied().zip(logits).collect())
    }
}

/// Softmax head plus replay buffer and the learner's own RNG.
#[derive(Debug, Clone)]
pub struct ReplaySoftmax {
    pub head: SoftmaxHead,
    pub buffer: ReplayBuffer<Vec<f32>>,
    pub replay_count: usize,
    rng: ChaCha8Rng,
}

impl ReplaySoftmax {
    pub fn new(dim: usize, learning_rate: f64, capacity: usize, seed: u64) -> Self {
        Self {
            head: SoftmaxHead::new(dim, learning_rate),
            buffer: ReplayBuffer::new(capacity),
            replay_count: DEFAULT_REPLAY_COUNT,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Mix up to `replay_count` stored embeddings with the new example, take
    /// one gradient step on the batch, then store the new example.
    /// Returns the batch size used.
    pub fn step(&mut self, z: &[f32], label: u32) -> Result<usize> {
        check_input(z, self.head.dim)?;
        self.head.ensure_class(label);
        let current = widen(z);
        let replayed: Vec<(Vec<f64>, u32)> = self
            .buffer
            .sample(self.replay_count, &mut self.rng)
            .into_iter()
            .map(|(p, c)| (widen(p), c))
            .collect();
        let mut batch: Vec<(&[f64], u32)> = Vec::with_capacity(replayed.len() + 1);
        batch.push((&current, label));
        batch.extend(replayed.iter().map(|(v, c)| (v.as_slice(), *c)));
        let g = self.head.loss_grad(&batch)?;
        self.head.apply(&g, self.head.learning_rate);
        if self.buffer.capacity() > 0 {
            self.buffer.insert(z.to_vec(), label, &mut self.rng)?;
        }
        Ok(batch.len())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::header(LEARNER_MAGIC, VERSION);
        w.u64(self.replay_count as u64);
        w.rng(&self.rng);
        self.head.write(&mut w);
        w.bytes(&self.buffer.to_bytes());
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.header(LEARNER_MAGIC, VERSION)?;
        let replay_count = r.len_u64()?;
        let rng = r.rng()?;
        let head = SoftmaxHead::read(&mut r)?;
        let buffer = ReplayBuffer::read_from(&mut r)?;
        r.finish()?;
        Ok(Self {
            head,
            buffer,
            replay_count,
            rng,
        })
    }
}

impl Classifier for ReplaySoftmax {
    fn scores(&self, z: &[f32]) -> Result<Vec<(u32, f64)>> {
        self.head.scores(z)
    }
}

impl OnlineLearner for ReplaySoftmax {
    fn learn(&mut self, z: &[f32], label: u32) -> Result<()> {
        self.step(z, label).map(|_| ())
    }

    fn known_classes(&self) -> Vec<u32> {
        self.head.classes.clone()
    }
}
