//! Noise predictors: the learned network, an analytic oracle, training and
//! corpus generation.

pub mod net;
mod train;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use net::Architecture;
pub use train::{
    augment_poses, build_corpus, cosine_lr, standable_pose, train, write_loss_csv, CorpusConfig, LossRecord, TrainConfig,
    Trained,
};

use crate::diffusion::{to_model_range, Denoiser, NoiseSchedule};
use crate::grid::io::{parse_field, split_header, write_atomic};
use crate::grid::LocalGrid;
use crate::{Error, Result};

pub const MODEL_MAGIC: &str = "OCCM1";

/// The learned noise predictor: architecture plus flat f32 parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserModel {
    plan: net::Plan,
    params: Vec<f32>,
}

impl DenoiserModel {
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        if arch.base_channels == 0 || arch.time_embed_dim < 2 || arch.time_embed_dim % 2 != 0 {
            return Err(Error::Config(format!("bad denoiser architecture {arch:?}")));
        }
        let plan = net::Plan::new(arch);
        let params = plan.init(&mut ChaCha8Rng::seed_from_u64(seed));
        Ok(Self { plan, params })
    }

    pub fn from_params(arch: Architecture, params: Vec<f32>) -> Result<Self> {
        let plan = net::Plan::new(arch);
        if params.len() != plan.n_params() {
            return Err(Error::ShapeMismatch(format!(
                "architecture needs {} parameters, got {}",
                plan.n_params(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numerical("non-finite model parameter".into()));
        }
        Ok(Self { plan, params })
    }

    pub fn arch(&self) -> Architecture {
        self.plan.arch()
    }

    pub fn plan(&self) -> &net::Plan {
        &self.plan
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let a = self.arch();
        let mut out = format!("{MODEL_MAGIC} {} {} {}\n", a.base_channels, a.time_embed_dim, self.params.len()).into_bytes();
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let (fields, payload) = split_header(bytes, MODEL_MAGIC)?;
        if fields.len() != 4 {
            return Err(Error::MalformedHeader(format!("expected 4 header fields, found {}", fields.len())));
        }
        let arch = Architecture {
            base_channels: parse_field(&fields, 1, "base_channels")?,
            time_embed_dim: parse_field(&fields, 2, "time_embed_dim")?,
        };
        let n: usize = parse_field(&fields, 3, "n_params")?;
        if payload.len() != 4 * n {
            return Err(Error::Truncated {
                expected: 4 * n,
                found: payload.len(),
            });
        }
        let params = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::from_params(arch, params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

impl Denoiser for DenoiserModel {
    fn predict(&self, x_t: &[f32], dims: [usize; 3], t: usize) -> Result<Vec<f32>> {
        net::check_dims(dims)?;
        if x_t.len() != dims.iter().product::<usize>() {
            return Err(Error::ShapeMismatch(format!("{} values for dims {dims:?}", x_t.len())));
        }
        Ok(net::forward(&self.plan, &self.params, x_t, dims, t, false).0)
    }
}

/// Exact noise for states generated from a known target:
/// `ε̂ = (x_t − √ᾱ_t·x_target) / √(1−ᾱ_t)`.
#[derive(Clone, Debug)]
pub struct OracleDenoiser {
    target: Vec<f32>,
    schedule: NoiseSchedule,
}

impl OracleDenoiser {
    /// `target` is a clean grid in `[0, 1]`.
    pub fn new(target: &LocalGrid, schedule: NoiseSchedule) -> Self {
        Self {
            target: target.values().iter().map(|v| to_model_range(*v)).collect(),
            schedule,
        }
    }
}

impl Denoiser for OracleDenoiser {
    fn predict(&self, x_t: &[f32], _dims: [usize; 3], t: usize) -> Result<Vec<f32>> {
        if x_t.len() != self.target.len() {
            return Err(Error::ShapeMismatch(format!(
                "oracle built for {} voxels, got {}",
                self.target.len(),
                x_t.len()
            )));
        }
        if t == 0 || t > self.schedule.steps() {
            return Err(Error::InvalidArgument(format!("oracle denoiser undefined at t = {t}")));
        }
        let ab = self.schedule.alpha_bar(t);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        Ok(x_t
            .iter()
            .zip(&self.target)
            .map(|(x, x0)| ((*x as f64 - a * *x0 as f64) / b) as f32)
            .collect())
    }
}
