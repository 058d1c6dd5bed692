//! Evaluation metrics: IoU, a seeded random-convolution feature embedder,
//! Fréchet and kernel distances between feature sets, and IoU histograms.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::grid::{LocalGrid, VoxelKey};
use crate::{Error, Result};

/// `|a ∩ b| / |a ∪ b|`, with two empty sets counting as identical.
pub fn iou(a: &BTreeSet<VoxelKey>, b: &BTreeSet<VoxelKey>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// IoU of two occupancy masks over the same window.
pub fn iou_mask(a: &[bool], b: &[bool]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("masks of {} and {} voxels", a.len(), b.len())));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in a.iter().zip(b) {
        inter += (*x && *y) as usize;
        union += (*x || *y) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

pub fn occupied_mask(grid: &LocalGrid, threshold: f32) -> Vec<bool> {
    grid.values().iter().map(|v| *v >= threshold).collect()
}

/// IoU of every unordered pair of predictions for one window.
pub fn pairwise_ious(predictions: &[LocalGrid], threshold: f32) -> Result<Vec<f64>> {
    let masks: Vec<Vec<bool>> = predictions.iter().map(|g| occupied_mask(g, threshold)).collect();
    let mut out = Vec::new();
    for i in 0..masks.len() {
        for j in i + 1..masks.len() {
            out.push(iou_mask(&masks[i], &masks[j])?);
        }
    }
    Ok(out)
}

/// Normalized histogram over `[0, 1]` with equal-width bins; the last bin is
/// closed so 1.0 lands in it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pmf {
    pub edges: Vec<f64>,
    pub mass: Vec<f64>,
    pub mean: f64,
    pub count: usize,
}

impl Pmf {
    pub fn from_values(values: &[f64], bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
        }
        let edges = (0..=bins).map(|i| i as f64 / bins as f64).collect();
        let mut mass = vec![0.0; bins];
        for v in values {
            let b = ((v.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
            mass[b] += 1.0;
        }
        let n = values.len();
        if n > 0 {
            mass.iter_mut().for_each(|m| *m /= n as f64);
        }
        let mean = if n > 0 { values.iter().sum::<f64>() / n as f64 } else { 0.0 };
        Ok(Self {
            edges,
            mass,
            mean,
            count: n,
        })
    }
}

/// Fixed random 3D convolution bank standing in for a pretrained feature
/// network: conv(1→8) → relu → 2× average pool → conv(8→32) → relu → global
/// mean, concatenated with the pooled first-layer means (40 features).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureEmbedder {
    seed: u64,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

const C1: usize = 8;
const C2: usize = 32;
const TAPS: usize = 27;

impl FeatureEmbedder {
    pub const DIM: usize = C1 + C2;

    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize, fan_in: usize| -> Vec<f64> {
            let d = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
            (0..n).map(|_| d.sample(&mut rng)).collect()
        };
        let w1 = draw(C1 * TAPS, TAPS);
        let b1 = draw(C1, 100 * TAPS);
        let w2 = draw(C2 * C1 * TAPS, C1 * TAPS);
        let b2 = draw(C2, 100 * C1 * TAPS);
        Self { seed, w1, b1, w2, b2 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Feature vector of a clean grid (values in `[0, 1]`, 0.5 unknown).
    pub fn embed(&self, grid: &LocalGrid) -> Vec<f64> {
        let dims = grid.dims();
        let x: Vec<f64> = grid.values().iter().map(|v| 2.0 * *v as f64 - 1.0).collect();
        let h1 = conv_relu(&x, 1, dims, &self.w1, &self.b1, C1);
        let (pooled, pdims) = avg_pool2(&h1, C1, dims);
        let h2 = conv_relu(&pooled, C1, pdims, &self.w2, &self.b2, C2);
        let mut out = Vec::with_capacity(Self::DIM);
        out.extend(channel_means(&pooled, C1));
        out.extend(channel_means(&h2, C2));
        out
    }

    pub fn embed_all(&self, grids: &[LocalGrid]) -> Vec<Vec<f64>> {
        grids.iter().map(|g| self.embed(g)).collect()
    }
}

/// 3×3×3 same-padded convolution, channel-major layout, followed by relu.
fn conv_relu(x: &[f64], cin: usize, dims: [usize; 3], w: &[f64], b: &[f64], cout: usize) -> Vec<f64> {
    let [nx, ny, nz] = dims;
    let n = nx * ny * nz;
    let mut out = vec![0.0; cout * n];
    for z in 0..nz {
        for y in 0..ny {
            for xx in 0..nx {
                let o = xx + nx * (y + ny * z);
                for co in 0..cout {
                    let mut acc = b[co];
                    for ci in 0..cin {
                        let wbase = (co * cin + ci) * TAPS;
                        let xbase = ci * n;
                        for dz in 0..3 {
                            let zz = z as isize + dz as isize - 1;
                            if zz < 0 || zz >= nz as isize {
                                continue;
                            }
                            for dy in 0..3 {
                                let yy = y as isize + dy as isize - 1;
                                if yy < 0 || yy >= ny as isize {
                                    continue;
                                }
                                for dx in 0..3 {
                                    let xq = xx as isize + dx as isize - 1;
                                    if xq < 0 || xq >= nx as isize {
                                        continue;
                                    }
                                    let idx = xq as usize + nx * (yy as usize + ny * zz as usize);
                                    acc += w[wbase + dx + 3 * (dy + 3 * dz)] * x[xbase + idx];
                                }
                            }
                        }
                    }
                    out[co * n + o] = acc.max(0.0);
                }
            }
        }
    }
    out
}

/// 2× average pooling per axis; an axis of length 1 is left alone and odd
/// remainders are dropped.
fn avg_pool2(x: &[f64], c: usize, dims: [usize; 3]) -> (Vec<f64>, [usize; 3]) {
    let f = dims.map(|d| if d >= 2 { 2 } else { 1 });
    let pd = [dims[0] / f[0], dims[1] / f[1], dims[2] / f[2]];
    let n = dims[0] * dims[1] * dims[2];
    let pn = pd[0] * pd[1] * pd[2];
    let scale = 1.0 / (f[0] * f[1] * f[2]) as f64;
    let mut out = vec![0.0; c * pn];
    for ch in 0..c {
        for z in 0..pd[2] {
            for y in 0..pd[1] {
                for xx in 0..pd[0] {
                    let mut acc = 0.0;
                    for dz in 0..f[2] {
                        for dy in 0..f[1] {
                            for dx in 0..f[0] {
                                let (sx, sy, sz) = (xx * f[0] + dx, y * f[1] + dy, z * f[2] + dz);
                                acc += x[ch * n + sx + dims[0] * (sy + dims[1] * sz)];
                            }
                        }
                    }
                    out[ch * pn + xx + pd[0] * (y + pd[1] * z)] = acc * scale;
                }
            }
        }
    }
    (out, pd)
}

fn channel_means(x: &[f64], c: usize) -> Vec<f64> {
    let n = x.len() / c;
    x.chunks(n).map(|ch| ch.iter().sum::<f64>() / n as f64).collect()
}

fn check_sets(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<usize> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 samples per set, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let d = a[0].len();
    if a.iter().chain(b).any(|v| v.len() != d) {
        return Err(Error::ShapeMismatch("feature vectors differ in dimension".into()));
    }
    Ok(d)
}

fn mean_cov(x: &[Vec<f64>], d: usize) -> (DVector<f64>, DMatrix<f64>) {
    let n = x.len();
    let mut mu = DVector::zeros(d);
    for v in x {
        mu += DVector::from_column_slice(v);
    }
    mu /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for v in x {
        let c = DVector::from_column_slice(v) - &mu;
        cov += &c * c.transpose();
    }
    cov /= (n - 1) as f64;
    (mu, cov)
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let vals = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Fréchet distance between Gaussians fitted to the two feature sets:
/// `‖μ_a − μ_b‖² + Tr(Σ_a + Σ_b − 2(Σ_a Σ_b)^{1/2})`. The trace of the
/// matrix root is taken as `Tr((√Σ_a Σ_b √Σ_a)^{1/2})`, which is symmetric
/// PSD, with negative round-off eigenvalues floored at zero.
pub fn fid(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let d = check_sets(a, b)?;
    let (mu_a, cov_a) = mean_cov(a, d);
    let (mu_b, cov_b) = mean_cov(b, d);
    let s = psd_sqrt(&cov_a);
    let inner = &s * &cov_b * &s;
    let inner = (&inner + inner.transpose()) * 0.5;
    let eig = SymmetricEigen::new(inner);
    let tr_root: f64 = eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    let dist = (mu_a - mu_b).norm_squared() + cov_a.trace() + cov_b.trace() - 2.0 * tr_root;
    if !dist.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite FID (trace terms {} / {} / {tr_root})",
            cov_a.trace(),
            cov_b.trace()
        )));
    }
    Ok(dist.max(0.0))
}

fn poly_kernel(x: &[f64], y: &[f64]) -> f64 {
    let d = x.len() as f64;
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    (dot / d + 1.0).powi(3)
}

/// Unbiased MMD² with the cubic polynomial kernel `(xᵀy/d + 1)³`. Reports
/// multiply by 1000.
pub fn kid(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    check_sets(a, b)?;
    let (m, n) = (a.len() as f64, b.len() as f64);
    let within = |s: &[Vec<f64>]| {
        let mut acc = 0.0;
        for i in 0..s.len() {
            for j in i + 1..s.len() {
                acc += poly_kernel(&s[i], &s[j]);
            }
        }
        2.0 * acc
    };
    let mut cross = 0.0;
    for x in a {
        for y in b {
            cross += poly_kernel(x, y);
        }
    }
    Ok(within(a) / (m * (m - 1.0)) + within(b) / (n * (n - 1.0)) - 2.0 * cross / (m * n))
}

/// Per-arm evaluation result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub windows: usize,
    pub fid: f64,
    pub kid_x1000: f64,
    pub iou_pmf: Pmf,
    /// Mean unknown fraction of the conditioning windows, in percent.
    pub unknown_pct: f64,
}

/// Compares evaluated windows against ground truth windows cut at the same
/// poses. `sample_ious` are pairwise IoUs between predictions at each pose
/// and `unknown` the unknown fraction of each conditioning window.
pub fn evaluate_run(
    evaluated: &[LocalGrid],
    ground_truth: &[LocalGrid],
    sample_ious: &[f64],
    unknown: &[f64],
    embedder: &FeatureEmbedder,
) -> Result<RunMetrics> {
    if evaluated.is_empty() || evaluated.len() != ground_truth.len() {
        return Err(Error::InvalidArgument(format!(
            "need paired non-empty window sets, got {} and {}",
            evaluated.len(),
            ground_truth.len()
        )));
    }
    if evaluated.iter().zip(ground_truth).any(|(e, g)| e.dims() != g.dims()) {
        return Err(Error::ShapeMismatch("evaluated and ground-truth windows differ in shape".into()));
    }
    let fa = embedder.embed_all(evaluated);
    let fb = embedder.embed_all(ground_truth);
    let unknown_pct = if unknown.is_empty() {
        0.0
    } else {
        100.0 * unknown.iter().sum::<f64>() / unknown.len() as f64
    };
    Ok(RunMetrics {
        windows: evaluated.len(),
        fid: fid(&fa, &fb)?,
        kid_x1000: 1000.0 * kid(&fa, &fb)?,
        iou_pmf: Pmf::from_values(sample_ious, 10)?,
        unknown_pct,
    })
}
