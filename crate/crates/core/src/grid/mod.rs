//! Voxel data model: lattice keys, poses, dense local cubes and the sparse
//! running map.

mod global;
pub mod io;
mod local;

use std::collections::HashMap;
use std::hash::BuildHasherDefault;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

pub use global::{extract_sensed_submap, extract_submap, Cell, GlobalOccupancyMap, MaskedSubmap, Provenance, VoxelState};
pub use local::{binarize, GridSpec, LocalGrid};

pub type Point = Vector3<f64>;

/// Fixed-key hasher so iteration order only depends on insertion history.
pub type DetHashMap<K, V> = HashMap<K, V, BuildHasherDefault<std::collections::hash_map::DefaultHasher>>;

/// Integer index of a voxel in the global lattice. The lattice origin is the
/// world origin, so voxel `(i, j, k)` spans `[i·res, (i+1)·res)` on x and so on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VoxelKey {
    pub i: i32,
    pub j: i32,
    pub k: i32,
}

impl VoxelKey {
    pub const fn new(i: i32, j: i32, k: i32) -> Self {
        Self { i, j, k }
    }

    /// Key of the voxel containing `p`.
    pub fn from_point(p: &Point, resolution: f64) -> Self {
        Self {
            i: (p.x / resolution).floor() as i32,
            j: (p.y / resolution).floor() as i32,
            k: (p.z / resolution).floor() as i32,
        }
    }

    pub fn center(&self, resolution: f64) -> Point {
        Point::new(
            (self.i as f64 + 0.5) * resolution,
            (self.j as f64 + 0.5) * resolution,
            (self.k as f64 + 0.5) * resolution,
        )
    }

    pub fn offset(&self, di: i32, dj: i32, dk: i32) -> Self {
        Self::new(self.i + di, self.j + dj, self.k + dk)
    }
}

/// Planar robot pose with height. `z` is the foot (ground contact) height for
/// robot poses and the cube center height for grid poses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
}

impl Pose {
    pub const fn new(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Self { x, y, z, yaw }
    }

    pub fn position(&self) -> Point {
        Point::new(self.x, self.y, self.z)
    }

    pub fn planar_distance(&self, other: &Pose) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

impl std::fmt::Display for Pose {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.3},{:.3},{:.3},{:.3}", self.x, self.y, self.z, self.yaw)
    }
}

impl std::str::FromStr for Pose {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| crate::Error::InvalidArgument(format!("pose '{s}': {e}")))?;
        match parts.as_slice() {
            [x, y, z, yaw] => Ok(Pose::new(*x, *y, *z, *yaw)),
            [x, y, z] => Ok(Pose::new(*x, *y, *z, 0.0)),
            _ => Err(crate::Error::InvalidArgument(format!(
                "pose '{s}' needs x,y,z[,yaw]"
            ))),
        }
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[inline]
pub fn logistic(l: f64) -> f64 {
    1.0 / (1.0 + (-l).exp())
}
