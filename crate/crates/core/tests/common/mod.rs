//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use streamlearn::feature_io::FeatureDataset;

/// Dense row-major matrix inverse by Gauss-Jordan elimination with partial
/// pivoting.
pub fn gauss_jordan_inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs()))
            .unwrap();
        m.swap(col, piv);
        let p = m[col][col];
        assert!(p.abs() > 1e-300, "singular matrix");
        for v in m[col].iter_mut() {
            *v /= p;
        }
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                if f != 0.0 {
                    for c in 0..2 * n {
                        m[r][c] -= f * m[col][c];
                    }
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

/// Batch class means and pooled (divide-by-n) within-class covariance.
pub struct BatchLda {
    pub classes: Vec<u32>,
    pub means: Vec<Vec<f64>>,
    pub covariance: Vec<Vec<f64>>,
    pub precision: Vec<Vec<f64>>,
}

impl BatchLda {
    pub fn fit(ds: &FeatureDataset, shrinkage: f64) -> Self {
        let d = ds.dim();
        let classes: Vec<u32> = ds.present_classes().into_iter().collect();
        let mut means = vec![vec![0.0; d]; classes.len()];
        let mut counts = vec![0usize; classes.len()];
        let slot = |l: u32| classes.iter().position(|&c| c == l).unwrap();
        for (l, v) in ds.iter() {
            let k = slot(l);
            counts[k] += 1;
            for (m, &x) in means[k].iter_mut().zip(v) {
                *m += x as f64;
            }
        }
        for (m, &c) in means.iter_mut().zip(&counts) {
            m.iter_mut().for_each(|x| *x /= c as f64);
        }
        let mut cov = vec![vec![0.0; d]; d];
        for (l, v) in ds.iter() {
            let mu = &means[slot(l)];
            let dev: Vec<f64> = v.iter().zip(mu).map(|(&x, m)| x as f64 - m).collect();
            for i in 0..d {
                for j in 0..d {
                    cov[i][j] += dev[i] * dev[j];
                }
            }
        }
        let n = ds.len() as f64;
        cov.iter_mut().flatten().for_each(|x| *x /= n);
        let shrunk: Vec<Vec<f64>> = (0..d)
            .map(|i| {
                (0..d)
                    .map(|j| (1.0 - shrinkage) * cov[i][j] + if i == j { shrinkage } else { 0.0 })
                    .collect()
            })
            .collect();
        let precision = gauss_jordan_inverse(&shrunk);
        Self { classes, means, covariance: cov, precision }
    }

    /// Mahalanobis-nearest class mean (lowest id on ties).
    pub fn predict(&self, z: &[f32]) -> u32 {
        let mut best = (self.classes[0], f64::INFINITY);
        for (c, mu) in self.classes.iter().zip(&self.means) {
            let dev: Vec<f64> = z.iter().zip(mu).map(|(&x, m)| x as f64 - m).collect();
            let dist: f64 = (0..dev.len())
                .map(|i| dev[i] * (0..dev.len()).map(|j| self.precision[i][j] * dev[j]).sum::<f64>())
                .sum();
            if dist < best.1 {
                best = (*c, dist);
            }
        }
        best.0
    }
}

/// Central finite-difference gradient of `f` with respect to `params`.
pub fn central_diff(params: &mut [f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    (0..params.len())
        .map(|i| {
            let orig = params[i];
            params[i] = orig + h;
            let up = f(params);
            params[i] = orig - h;
            let down = f(params);
            params[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// ‖a − b‖ / max(‖a‖, ‖b‖), zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Nearest centroid by exhaustive scan, computed in f64 from scratch.
pub fn brute_nearest(slice: &[f32], centroids: &[&[f32]]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d: f64 = slice.iter().zip(*c).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum();
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use streamlearn::remind::{PlasticHead, SoftLabel};
use streamlearn::replay_softmax::SoftmaxHead;

/// Relative error of the analytic softmax gradient on a random 3-class,
/// dim-5 instance.
pub fn softmax_grad_rel_err(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (dim, k, n) = (5, 3, 6);
    let mut head = SoftmaxHead::new(dim, 0.1);
    for c in 0..k {
        head.ensure_class(c as u32 * 2);
    }
    head.weights_mut().iter_mut().for_each(|w| *w = rng.random_range(-1.0..1.0));
    head.bias_mut().iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
    let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let ys: Vec<u32> = (0..n).map(|_| rng.random_range(0..k) as u32 * 2).collect();
    let batch: Vec<(&[f64], u32)> = xs.iter().map(Vec::as_slice).zip(ys.iter().copied()).collect();

    let g = head.loss_grad(&batch).unwrap();
    let analytic: Vec<f64> = g.grad_w.iter().chain(&g.grad_b).copied().collect();
    let mut params: Vec<f64> = head.weights().iter().chain(head.bias()).copied().collect();
    let nw = head.weights().len();
    let numeric = central_diff(&mut params, 1e-4, |p| {
        let mut h = head.clone();
        h.weights_mut().copy_from_slice(&p[..nw]);
        h.bias_mut().copy_from_slice(&p[nw..]);
        h.loss_grad(&batch).unwrap().loss
    });
    rel_err(&analytic, &numeric)
}

/// Relative error of the analytic plastic-head gradient on a random dim-8,
/// hidden-5, 3-class instance with soft labels.
pub fn head_grad_rel_err(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (dim, hidden, k, n) = (8, 5, 3u32, 6);
    let mut head = PlasticHead::new(dim, hidden, &mut rng);
    for c in 0..k {
        head.ensure_class(c);
    }
    head.w2.iter_mut().for_each(|w| *w = rng.random_range(-1.0..1.0));
    head.b1.iter_mut().for_each(|b| *b = rng.random_range(-0.3..0.3));
    head.b2.iter_mut().for_each(|b| *b = rng.random_range(-0.3..0.3));
    let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let labels: Vec<SoftLabel> = (0..n)
        .map(|_| {
            let l: f64 = rng.random();
            let a = rng.random_range(0..k);
            let b = (a + 1 + rng.random_range(0..k - 1)) % k;
            vec![(a.min(b), if a < b { l } else { 1.0 - l }), (a.max(b), if a < b { 1.0 - l } else { l })]
        })
        .collect();
    let batch: Vec<(&[f64], &SoftLabel)> = xs.iter().map(Vec::as_slice).zip(&labels).collect();

    let g = head.loss_grad(&batch).unwrap();
    let analytic: Vec<f64> = [&g.w1, &g.b1, &g.w2, &g.b2].into_iter().flatten().copied().collect();
    let sizes = [head.w1.len(), head.b1.len(), head.w2.len(), head.b2.len()];
    let mut params: Vec<f64> = [&head.w1, &head.b1, &head.w2, &head.b2].into_iter().flatten().copied().collect();
    let numeric = central_diff(&mut params, 1e-4, |p| {
        let mut h = head.clone();
        let mut at = 0;
        for (dst, len) in [&mut h.w1, &mut h.b1, &mut h.w2, &mut h.b2].into_iter().zip(sizes) {
            dst.copy_from_slice(&p[at..at + len]);
            at += len;
        }
        h.loss_grad(&batch).unwrap().loss
    });
    rel_err(&analytic, &numeric)
}
