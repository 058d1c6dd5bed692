//! DDPM noise schedules, forward corruption, strided reverse steps and the
//! occupancy inpainting sampler.
//!
//! Clean grids live in `[0, 1]`; the sampler works on values rescaled to
//! `[-1, 1]` so that unknown (0.5) maps to 0.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid::{LocalGrid, MaskedSubmap};
use crate::{Error, Result};

/// Noise predictor `ε_θ(x_t, t)` over a dense grid of the given dims.
pub trait Denoiser: Sync {
    fn predict(&self, x_t: &[f32], dims: [usize; 3], t: usize) -> Result<Vec<f32>>;
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn predict(&self, x_t: &[f32], dims: [usize; 3], t: usize) -> Result<Vec<f32>> {
        (**self).predict(x_t, dims, t)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    /// Index 0 holds the `t = 0` convention (β = 0, ᾱ = 1).
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
}

/// β linearly spaced over `[beta_start, beta_end]` for `t = 1..=steps`.
pub fn linear_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::InvalidArgument("schedule needs at least one step".into()));
    }
    if !(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "need 0 < beta_start < beta_end < 1, got {beta_start} / {beta_end}"
        )));
    }
    let mut beta = vec![0.0; steps + 1];
    let mut alpha_bar = vec![1.0; steps + 1];
    for t in 1..=steps {
        beta[t] = if steps == 1 {
            beta_start
        } else {
            beta_start + (beta_end - beta_start) * (t - 1) as f64 / (steps - 1) as f64
        };
        alpha_bar[t] = alpha_bar[t - 1] * (1.0 - beta[t]);
    }
    Ok(NoiseSchedule { beta, alpha_bar })
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.beta.len() - 1
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.beta[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    fn check(&self, t: usize) -> Result<()> {
        if t > self.steps() {
            return Err(Error::OutOfBounds(format!("diffusion step {t} beyond T = {}", self.steps())));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub train_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub inference_steps: usize,
    /// Clamp the implied clean estimate to the data range at every step.
    pub clip_x0: bool,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            train_steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            inference_steps: 30,
            clip_x0: true,
        }
    }
}

impl ScheduleConfig {
    pub fn noise(&self) -> Result<NoiseSchedule> {
        linear_schedule(self.train_steps, self.beta_start, self.beta_end)
    }

    pub fn inference(&self) -> Result<InferenceSchedule> {
        InferenceSchedule::strided(self.train_steps, self.inference_steps)
    }
}

/// Descending subsequence of `1..=T` visited at sampling time.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InferenceSchedule {
    steps: Vec<usize>,
}

impl InferenceSchedule {
    /// `n` evenly spaced steps from `T` down to 1 (rounded). `n = 1` is just `[T]`.
    pub fn strided(train_steps: usize, n: usize) -> Result<Self> {
        if n == 0 || n > train_steps {
            return Err(Error::InvalidArgument(format!(
                "inference steps must be in 1..={train_steps}, got {n}"
            )));
        }
        if n == 1 {
            return Ok(Self {
                steps: vec![train_steps],
            });
        }
        let mut steps: Vec<usize> = (0..n)
            .map(|i| (1.0 + (train_steps - 1) as f64 * i as f64 / (n - 1) as f64).round() as usize)
            .collect();
        steps.dedup();
        steps.reverse();
        Ok(Self { steps })
    }

    pub fn full(train_steps: usize) -> Self {
        Self {
            steps: (1..=train_steps).rev().collect(),
        }
    }

    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// `(t_hi, t_lo)` pairs; the last pair ends at 0.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.steps
            .iter()
            .enumerate()
            .map(|(i, &t)| (t, self.steps.get(i + 1).copied().unwrap_or(0)))
    }
}

/// `x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·ε`.
pub fn forward_noise(schedule: &NoiseSchedule, x0: &[f32], t: usize, eps: &[f32]) -> Result<Vec<f32>> {
    schedule.check(t)?;
    if x0.len() != eps.len() {
        return Err(Error::ShapeMismatch(format!("x0 has {} values, noise {}", x0.len(), eps.len())));
    }
    let ab = schedule.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0
        .iter()
        .zip(eps)
        .map(|(x, e)| (a * *x as f64 + b * *e as f64) as f32)
        .collect())
}

/// One reverse transition from `t_hi` to `t_lo < t_hi`, bridging the skipped
/// steps with `α = ᾱ_hi / ᾱ_lo`. `noise` is the standard-normal draw for the
/// posterior variance and is ignored when `t_lo = 0`. With `clip_x0` the
/// noise estimate is replaced by the one consistent with the clean estimate
/// clamped to `[-1, 1]`.
pub fn reverse_step(
    schedule: &NoiseSchedule,
    x_t: &[f32],
    t_hi: usize,
    t_lo: usize,
    eps_hat: &[f32],
    noise: Option<&[f32]>,
    clip_x0: bool,
) -> Result<Vec<f32>> {
    schedule.check(t_hi)?;
    if t_lo >= t_hi {
        return Err(Error::InvalidArgument(format!("reverse step {t_hi} -> {t_lo} is out of order")));
    }
    if eps_hat.len() != x_t.len() || noise.is_some_and(|z| z.len() != x_t.len()) {
        return Err(Error::ShapeMismatch("reverse step inputs differ in length".into()));
    }
    let ab_hi = schedule.alpha_bar(t_hi);
    let ab_lo = schedule.alpha_bar(t_lo);
    let alpha = ab_hi / ab_lo;
    let beta = 1.0 - alpha;
    let s_hi = (1.0 - ab_hi).sqrt();
    let coef = beta / s_hi;
    let inv_sqrt_alpha = 1.0 / alpha.sqrt();
    let sigma = if t_lo == 0 {
        0.0
    } else {
        ((1.0 - ab_lo) / (1.0 - ab_hi) * beta).sqrt()
    };
    let mut out = Vec::with_capacity(x_t.len());
    for i in 0..x_t.len() {
        let x = x_t[i] as f64;
        let mut e = eps_hat[i] as f64;
        if clip_x0 {
            let x0 = (x - s_hi * e) / ab_hi.sqrt();
            if !(-1.0..=1.0).contains(&x0) {
                e = (x - ab_hi.sqrt() * x0.clamp(-1.0, 1.0)) / s_hi;
            }
        }
        let mut v = inv_sqrt_alpha * (x - coef * e);
        if sigma > 0.0 {
            if let Some(z) = noise {
                v += sigma * z[i] as f64;
            }
        }
        out.push(v as f32);
    }
    Ok(out)
}

#[inline]
pub fn to_model_range(v: f32) -> f32 {
    2.0 * v - 1.0
}

#[inline]
pub fn from_model_range(v: f32) -> f32 {
    ((v + 1.0) / 2.0).clamp(0.0, 1.0)
}

/// Mixes a base seed with a path of indices (splitmix64 finalizer per part),
/// so per-tick and per-window streams are independent but reproducible.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    };
    parts.iter().fold(mix(base), |acc, p| mix(acc.rotate_left(23) ^ mix(*p)))
}

pub(crate) fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Everything the sampler needs besides the denoiser and the window.
#[derive(Clone, Debug)]
pub struct Sampler {
    pub schedule: NoiseSchedule,
    pub inference: InferenceSchedule,
    pub clip_x0: bool,
}

impl Sampler {
    pub fn new(cfg: &ScheduleConfig) -> Result<Self> {
        Ok(Self {
            schedule: cfg.noise()?,
            inference: cfg.inference()?,
            clip_x0: cfg.clip_x0,
        })
    }
}

/// Inpainting sampler. Starts from pure noise; before every denoiser call the
/// observed voxels are overwritten with the observation noised to the current
/// level. After the last step they are overwritten with the clean
/// observation, so observed voxels come back exactly.
pub fn inpaint_sample<D: Denoiser + ?Sized>(
    denoiser: &D,
    submap: &MaskedSubmap,
    sampler: &Sampler,
    seed: u64,
) -> Result<LocalGrid> {
    let grid = &submap.grid;
    let dims = grid.dims();
    let n = grid.len();
    let obs: Vec<f32> = grid.values().iter().map(|v| to_model_range(*v)).collect();
    let observed: Vec<usize> = (0..n).filter(|&i| submap.is_observed(i)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = normal_vec(&mut rng, n);
    for (t_hi, t_lo) in sampler.inference.pairs() {
        let ab = sampler.schedule.alpha_bar(t_hi);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        for &i in &observed {
            let z: f32 = StandardNormal.sample(&mut rng);
            x[i] = (a * obs[i] as f64 + b * z as f64) as f32;
        }
        let eps = denoiser.predict(&x, dims, t_hi)?;
        if eps.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "denoiser returned {} values for a {n}-voxel grid",
                eps.len()
            )));
        }
        let z = (t_lo > 0).then(|| normal_vec(&mut rng, n));
        x = reverse_step(&sampler.schedule, &x, t_hi, t_lo, &eps, z.as_deref(), sampler.clip_x0)?;
    }
    for &i in &observed {
        x[i] = obs[i];
    }
    grid.with_values(x.into_iter().map(from_model_range).collect())
}

/// Pool for independent samples, capped by `OCCUGEN_THREADS`.
pub fn sampler_pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let threads = std::env::var("OCCUGEN_THREADS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|n| *n > 0)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("sampler thread pool")
    })
}

/// One sample per seed, returned in seed order regardless of scheduling.
pub fn sample_batch<D: Denoiser + ?Sized>(
    denoiser: &D,
    submap: &MaskedSubmap,
    sampler: &Sampler,
    seeds: &[u64],
) -> Result<Vec<LocalGrid>> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("sample_batch needs k >= 1".into()));
    }
    let mut seen = BTreeSet::new();
    for s in seeds {
        if !seen.insert(*s) {
            return Err(Error::DuplicateSeed(*s));
        }
    }
    sampler_pool().install(|| {
        seeds
            .par_iter()
            .map(|s| inpaint_sample(denoiser, submap, sampler, *s))
            .collect()
    })
}
