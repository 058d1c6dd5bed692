// Voxel traversal after Amanatides & Woo, "A Fast Voxel Traversal Algorithm
// for Ray Tracing" (1987).

use super::{GroundTruthWorld, Material};
use crate::grid::{Point, VoxelKey};
use crate::{Error, Result};

/// Walks the lattice cells pierced by the segment `origin + t·dir`,
/// `t ∈ [0, max_range)`, in order. Yields each cell with its entry distance.
#[derive(Clone, Debug)]
pub struct VoxelTraversal {
    key: VoxelKey,
    step: [i32; 3],
    t_max: [f64; 3],
    t_delta: [f64; 3],
    t_entry: f64,
    max_range: f64,
    done: bool,
}

impl VoxelTraversal {
    pub fn new(origin: &Point, dir: &Point, max_range: f64, resolution: f64) -> Self {
        let key = VoxelKey::from_point(origin, resolution);
        let cell = [key.i, key.j, key.k];
        let mut step = [0i32; 3];
        let mut t_max = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        for a in 0..3 {
            let d = dir[a];
            if d > 0.0 {
                step[a] = 1;
                let boundary = (cell[a] + 1) as f64 * resolution;
                t_max[a] = (boundary - origin[a]) / d;
                t_delta[a] = resolution / d;
            } else if d < 0.0 {
                step[a] = -1;
                let boundary = cell[a] as f64 * resolution;
                t_max[a] = (boundary - origin[a]) / d;
                t_delta[a] = -resolution / d;
            }
        }
        Self {
            key,
            step,
            t_max,
            t_delta,
            t_entry: 0.0,
            max_range,
            done: !(max_range > 0.0),
        }
    }
}

impl Iterator for VoxelTraversal {
    type Item = (VoxelKey, f64);

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let current = (self.key, self.t_entry);
        // axis whose boundary comes first; ties resolve x, then y, then z
        let a = if self.t_max[0] <= self.t_max[1] && self.t_max[0] <= self.t_max[2] {
            0
        } else if self.t_max[1] <= self.t_max[2] {
            1
        } else {
            2
        };
        let t_next = self.t_max[a];
        if t_next >= self.max_range || !t_next.is_finite() {
            self.done = true;
        } else {
            match a {
                0 => self.key.i += self.step[0],
                1 => self.key.j += self.step[1],
                _ => self.key.k += self.step[2],
            }
            self.t_entry = t_next;
            self.t_max[a] += self.t_delta[a];
        }
        Some(current)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RayHit {
    pub point: Point,
    pub key: VoxelKey,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RayResult {
    pub hit: Option<RayHit>,
    /// Cells passed through before the hit, in order.
    pub traversed: Vec<VoxelKey>,
}

/// Casts a lidar ray through the ground truth. Free and glass cells are passed
/// through; the first solid cell returns a hit on its entry face. Leaving the
/// world ends the ray without a hit.
pub fn raycast(world: &GroundTruthWorld, origin: &Point, direction: &Point, max_range: f64) -> Result<RayResult> {
    if !world.contains_point(origin) {
        return Err(Error::OutOfBounds(format!(
            "ray origin ({:.3}, {:.3}, {:.3}) outside world",
            origin.x, origin.y, origin.z
        )));
    }
    if (direction.norm() - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidArgument(format!(
            "ray direction must be unit length, norm = {}",
            direction.norm()
        )));
    }
    let mut traversed = Vec::new();
    for (key, t) in VoxelTraversal::new(origin, direction, max_range, world.resolution()) {
        if !world.contains_key(&key) {
            break;
        }
        if world.material(&key) == Material::Solid {
            return Ok(RayResult {
                hit: Some(RayHit {
                    point: origin + direction * t,
                    key,
                    distance: t,
                }),
                traversed,
            });
        }
        traversed.push(key);
    }
    Ok(RayResult { hit: None, traversed })
}
