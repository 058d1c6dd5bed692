//! Generative occupancy-map synthesis for simulated robotic exploration.
//!
//! The crate is organised bottom-up:
//!
//! * [`grid`]: lattice keys, dense local cubes, the sparse running map and file formats.
//! * [`sensor`]: procedurally generated ground-truth worlds and a simulated lidar.
//! * [`mapping`]: log-odds scan insertion and fusion of generated predictions.
//! * [`diffusion`]: noise schedules, forward corruption and the inpainting sampler.
//! * [`denoiser`]: the noise-prediction network, an analytic oracle and training.
//! * [`planner`]: graph-based exploration with volumetric / exploration gain.
//! * [`metrics`]: IoU, FID and KID over a fixed random feature embedder.
//! * [`harness`]: run configuration, exploration and evaluation drivers.

pub mod denoiser;
pub mod diffusion;
mod error;
pub mod grid;
pub mod harness;
pub mod mapping;
pub mod metrics;
pub mod planner;
pub mod sensor;

pub use error::{Error, Result};
