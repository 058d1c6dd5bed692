use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{net, Architecture, DenoiserModel};
use crate::diffusion::{forward_noise, normal_vec, to_model_range, NoiseSchedule};
use crate::grid::io::write_atomic;
use crate::grid::{GridSpec, LocalGrid, Pose, VoxelKey};
use crate::sensor::{make_world, GroundTruthWorld, Material, ScenarioKind};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub arch: Architecture,
    pub batch_size: usize,
    pub epochs: usize,
    /// Hard cap on optimizer steps; 0 means no cap.
    pub max_steps: usize,
    pub warmup_steps: usize,
    pub lr_min: f64,
    pub lr_max: f64,
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            arch: Architecture::default(),
            batch_size: 8,
            epochs: 20,
            max_steps: 0,
            warmup_steps: 100,
            lr_min: 1e-5,
            lr_max: 2e-3,
            grad_clip: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn total_steps(&self, corpus_len: usize) -> usize {
        let per_epoch = corpus_len.div_ceil(self.batch_size.max(1));
        let total = per_epoch * self.epochs;
        if self.max_steps > 0 {
            total.min(self.max_steps)
        } else {
            total
        }
    }
}

/// Linear warm-up from `lr_min` to `lr_max`, then cosine decay back to `lr_min`.
pub fn cosine_lr(step: usize, total: usize, warmup: usize, lr_min: f64, lr_max: f64) -> f64 {
    if step < warmup {
        return lr_min + (lr_max - lr_min) * step as f64 / warmup as f64;
    }
    let span = total.saturating_sub(warmup).max(1);
    let progress = ((step - warmup) as f64 / span as f64).min(1.0);
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (PI * progress).cos())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

pub struct Trained {
    pub model: DenoiserModel,
    pub losses: Vec<LossRecord>,
}

struct Adam {
    m: Vec<f32>,
    v: Vec<f32>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f32], grads: &[f32], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i] as f64;
            let m = Self::B1 * self.m[i] as f64 + (1.0 - Self::B1) * g;
            let v = Self::B2 * self.v[i] as f64 + (1.0 - Self::B2) * g * g;
            self.m[i] = m as f32;
            self.v[i] = v as f32;
            params[i] -= (lr * (m / c1) / ((v / c2).sqrt() + Self::EPS)) as f32;
        }
    }
}

/// Trains a fresh model on `corpus` with the ε-prediction MSE objective.
/// Single-threaded and fully determined by `cfg.seed`.
pub fn train(corpus: &[LocalGrid], schedule: &NoiseSchedule, cfg: &TrainConfig) -> Result<Trained> {
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("training corpus is empty".into()));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::Config("batch_size and epochs must be positive".into()));
    }
    let dims = corpus[0].dims();
    net::check_dims(dims)?;
    if corpus.iter().any(|g| g.dims() != dims) {
        return Err(Error::ShapeMismatch("corpus grids differ in shape".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = DenoiserModel::new(cfg.arch, rng.random())?;
    let data: Vec<Vec<f32>> = corpus
        .iter()
        .map(|g| g.values().iter().map(|v| to_model_range(*v)).collect())
        .collect();
    let n_vox = data[0].len();
    let total = cfg.total_steps(corpus.len());
    let mut adam = Adam::new(model.n_params());
    let mut grads = vec![0.0f32; model.n_params()];
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut cursor = order.len();
    let mut losses = Vec::with_capacity(total);
    for step in 0..total {
        grads.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for _ in 0..cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let x0 = &data[order[cursor]];
            cursor += 1;
            let t = rng.random_range(1..=schedule.steps());
            let eps = normal_vec(&mut rng, n_vox);
            let xt = forward_noise(schedule, x0, t, &eps)?;
            let (out, tape) = net::forward(model.plan(), model.params(), &xt, dims, t, true);
            let scale = 2.0 / (n_vox * cfg.batch_size) as f32;
            let mut dy = Vec::with_capacity(n_vox);
            for (o, e) in out.iter().zip(&eps) {
                let d = o - e;
                loss += (d as f64) * (d as f64);
                dy.push(scale * d);
            }
            net::backward(model.plan(), model.params(), &tape.expect("tape kept"), &dy, &mut grads);
        }
        loss /= (n_vox * cfg.batch_size) as f64;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("training loss diverged at step {step}")));
        }
        let norm = grads.iter().map(|g| (*g as f64) * (*g as f64)).sum::<f64>().sqrt();
        if cfg.grad_clip > 0.0 && norm > cfg.grad_clip {
            let s = (cfg.grad_clip / norm) as f32;
            grads.iter_mut().for_each(|g| *g *= s);
        }
        let lr = cosine_lr(step, total, cfg.warmup_steps, cfg.lr_min, cfg.lr_max);
        adam.step(model.params_mut(), &grads, lr);
        losses.push(LossRecord { step, loss, lr });
        if step % 100 == 0 {
            log::info!("train step {step}/{total} loss {loss:.4} lr {lr:.2e}");
        }
    }
    Ok(Trained { model, losses })
}

pub fn write_loss_csv(path: &Path, losses: &[LossRecord]) -> Result<()> {
    let mut s = String::from("step,loss,lr\n");
    for r in losses {
        s.push_str(&format!("{},{:.8},{:.8e}\n", r.step, r.loss, r.lr));
    }
    write_atomic(path, s.as_bytes())
}

const MAX_RETRIES: usize = 200;

fn foot_is_free(world: &GroundTruthWorld, x: f64, y: f64, z: f64) -> bool {
    let key = VoxelKey::from_point(&Pose::new(x, y, z, 0.0).position(), world.resolution());
    world.contains_key(&key) && !world.is_blocking(&key)
}

/// `n` jittered copies of `pose`: x/y offsets uniform in `[-1, 1]` m and a
/// uniform yaw. Offsets whose foot voxel is blocked are redrawn.
pub fn augment_poses<R: Rng>(world: &GroundTruthWorld, pose: &Pose, n: usize, rng: &mut R) -> Result<Vec<Pose>> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut found = None;
        for _ in 0..MAX_RETRIES {
            let x = pose.x + rng.random_range(-1.0..=1.0);
            let y = pose.y + rng.random_range(-1.0..=1.0);
            let yaw = rng.random_range(0.0..2.0 * PI);
            if foot_is_free(world, x, y, pose.z) {
                found = Some(Pose::new(x, y, pose.z, yaw));
                break;
            }
        }
        match found {
            Some(p) => out.push(p),
            None => {
                return Err(Error::InvalidArgument(format!(
                    "no free pose near {pose} after {MAX_RETRIES} draws"
                )))
            }
        }
    }
    Ok(out)
}

/// Uniformly drawn pose standing on solid floor with free space above.
pub fn standable_pose<R: Rng>(world: &GroundTruthWorld, rng: &mut R) -> Result<Pose> {
    let (_, hi) = world.bounds();
    let r = world.resolution();
    for _ in 0..10 * MAX_RETRIES {
        let x = rng.random_range(0.0..hi.x);
        let y = rng.random_range(0.0..hi.y);
        let floor = VoxelKey::from_point(&Pose::new(x, y, 0.5 * r, 0.0).position(), r);
        if world.material(&floor) == Material::Solid && world.material(&floor.offset(0, 0, 1)) == Material::Free {
            return Ok(Pose::new(x, y, r, rng.random_range(0.0..2.0 * PI)));
        }
    }
    Err(Error::InvalidArgument("world has no standable floor".into()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub n_worlds: usize,
    pub world_seed: u64,
    pub poses_per_world: usize,
    pub augmentations: usize,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_worlds: 8,
            world_seed: 1000,
            poses_per_world: 20,
            augmentations: 10,
            seed: 0,
        }
    }
}

impl CorpusConfig {
    pub fn worlds(&self, resolution: f64) -> Result<Vec<GroundTruthWorld>> {
        (0..self.n_worlds as u64)
            .map(|i| make_world(ScenarioKind::RandomRooms, self.world_seed + i, resolution).map(|s| s.world))
            .collect()
    }
}

/// Complete ground-truth cubes at augmented poses: for every world,
/// `poses_per_world` standable base poses, each jittered `augmentations` times.
pub fn build_corpus(
    worlds: &[GroundTruthWorld],
    poses_per_world: usize,
    augmentations: usize,
    spec: &GridSpec,
    seed: u64,
) -> Result<Vec<LocalGrid>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(worlds.len() * poses_per_world * augmentations);
    for world in worlds {
        if (world.resolution() - spec.resolution).abs() > 1e-12 {
            return Err(Error::ResolutionMismatch {
                map: world.resolution(),
                input: spec.resolution,
            });
        }
        for _ in 0..poses_per_world {
            let base = standable_pose(world, &mut rng)?;
            for pose in augment_poses(world, &base, augmentations, &mut rng)? {
                let template = LocalGrid::filled(spec.dims, spec.resolution, spec.center_for(pose), 0.0)?;
                out.push(world.local_grid(&template)?);
            }
        }
    }
    Ok(out)
}
