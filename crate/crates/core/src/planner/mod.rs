//! Graph-based exploration planning: traversability, sampled graphs,
//! volumetric / exploration gain, frontier selection and the explore loop.

mod explore;
mod graph;

use serde::{Deserialize, Serialize};

pub use explore::{
    oracle_tour, path_crosses_drop_zone, predict_window, resample_polyline, ExploreConfig, Explorer, Mode, Outcome,
    PredictionSetup, RunSummary, TickRecord,
};
pub use graph::{
    build_graph, exploration_gain_along, select_frontiers, volumetric_gain, ExplorationGraph, Vertex,
};

use crate::grid::{GlobalOccupancyMap, Point, VoxelKey};
use crate::sensor::{GroundTruthWorld, LidarConfig};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerParams {
    pub gamma_s: f64,
    pub gamma_d: f64,
    /// Minimum spacing between selected frontier vertices (m).
    pub d_m: f64,
    pub n_max: usize,
    /// Traversable vertices sampled per graph (rejection sampling, bounded tries).
    pub sample_count: usize,
    pub connect_radius: f64,
    /// Half side of the square sampling window around the robot (m).
    pub sample_half_extent: f64,
    pub fc_range: f64,
    pub robot_radius: f64,
    pub body_height: f64,
    /// Support must lie between these depths below the foot (m).
    pub support_depth_min: f64,
    pub support_depth_max: f64,
    /// Ray pattern used to count unknown voxels at each vertex.
    pub gain_lidar: LidarConfig,
    /// Unknown voxels above this height over the foot do not count as gain (m).
    pub gain_height: f64,
    /// Exploration stops once no vertex gains more than this.
    pub gain_epsilon: f64,
    /// Distance travelled along the chosen path per tick (m).
    pub step_length: f64,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            gamma_s: 0.5,
            gamma_d: 0.2,
            d_m: 1.5,
            n_max: 3,
            sample_count: 60,
            connect_radius: 1.6,
            sample_half_extent: 6.0,
            fc_range: 7.0,
            robot_radius: 0.3,
            body_height: 1.0,
            support_depth_min: 0.1,
            support_depth_max: 0.4,
            gain_lidar: LidarConfig {
                n_azimuth: 36,
                n_rings: 16,
                max_range: 5.0,
                ..LidarConfig::default()
            },
            gain_height: 2.0,
            gain_epsilon: 0.05,
            step_length: 1.0,
        }
    }
}

impl PlannerParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_s > 0.0 && self.gamma_d > 0.0) {
            return Err(Error::Config("gamma_s and gamma_d must be positive".into()));
        }
        if !(self.d_m > 0.0) || self.n_max == 0 {
            return Err(Error::Config("d_m must be positive and n_max at least 1".into()));
        }
        if !(self.connect_radius > 0.0 && self.step_length > 0.0 && self.sample_half_extent > 0.0) {
            return Err(Error::Config("planner distances must be positive".into()));
        }
        if !(self.support_depth_min >= 0.0 && self.support_depth_min < self.support_depth_max) {
            return Err(Error::Config("support band must satisfy 0 <= min < max".into()));
        }
        self.gain_lidar.validate()
    }
}

/// Anything the traversability checks can ask "is this voxel solid?".
pub trait OccupancyQuery {
    fn resolution(&self) -> f64;
    fn blocked(&self, key: &VoxelKey) -> bool;
}

impl OccupancyQuery for GlobalOccupancyMap {
    fn resolution(&self) -> f64 {
        GlobalOccupancyMap::resolution(self)
    }

    /// Occupied, sensed or predicted. Unknown space is optimistic.
    fn blocked(&self, key: &VoxelKey) -> bool {
        self.is_occupied(key)
    }
}

impl OccupancyQuery for GroundTruthWorld {
    fn resolution(&self) -> f64 {
        GroundTruthWorld::resolution(self)
    }

    fn blocked(&self, key: &VoxelKey) -> bool {
        self.is_blocking(key)
    }
}

/// Footprint sample points: the center and eight points on the body radius.
fn footprint(x: f64, y: f64, radius: f64) -> impl Iterator<Item = (f64, f64)> {
    std::iter::once((x, y)).chain((0..8).map(move |i| {
        let a = i as f64 * std::f64::consts::FRAC_PI_4;
        (x + radius * a.cos(), y + radius * a.sin())
    }))
}

/// No blocked voxel inside the body volume standing at `(x, y, foot_z)`.
pub fn body_clear<Q: OccupancyQuery + ?Sized>(q: &Q, x: f64, y: f64, foot_z: f64, p: &PlannerParams) -> bool {
    let r = q.resolution();
    let k0 = (foot_z / r).floor() as i32;
    let k1 = ((foot_z + p.body_height) / r).floor() as i32;
    footprint(x, y, p.robot_radius).all(|(px, py)| {
        let base = VoxelKey::from_point(&Point::new(px, py, foot_z), r);
        (k0..=k1).all(|k| !q.blocked(&VoxelKey::new(base.i, base.j, k)))
    })
}

/// Some blocked voxel overlaps the support band under `(x, y)`.
pub fn supported<Q: OccupancyQuery + ?Sized>(q: &Q, x: f64, y: f64, foot_z: f64, p: &PlannerParams) -> bool {
    let r = q.resolution();
    let base = VoxelKey::from_point(&Point::new(x, y, foot_z), r);
    let lo = ((foot_z - p.support_depth_max) / r).floor() as i32;
    let hi = ((foot_z - p.support_depth_min) / r).floor() as i32;
    (lo..=hi).any(|k| q.blocked(&VoxelKey::new(base.i, base.j, k)))
}

/// Planar sample points along a segment, spaced at most half a voxel apart,
/// both endpoints included.
pub fn segment_samples(a: (f64, f64), b: (f64, f64), resolution: f64) -> Vec<(f64, f64)> {
    let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
    let n = ((len / (0.5 * resolution)).ceil() as usize).max(1);
    (0..=n)
        .map(|i| {
            let s = i as f64 / n as f64;
            (a.0 + s * (b.0 - a.0), a.1 + s * (b.1 - a.1))
        })
        .collect()
}

/// Collision-free and ground-supported at every sample along the segment.
pub fn segment_traversable<Q: OccupancyQuery + ?Sized>(
    q: &Q,
    a: (f64, f64),
    b: (f64, f64),
    foot_z: f64,
    p: &PlannerParams,
) -> bool {
    segment_samples(a, b, q.resolution())
        .into_iter()
        .all(|(x, y)| supported(q, x, y, foot_z, p) && body_clear(q, x, y, foot_z, p))
}
