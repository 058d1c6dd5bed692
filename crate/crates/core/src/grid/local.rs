use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{Point, Pose, VoxelKey};
use crate::{Error, Result};

/// Shape and voxel size of the cubes cut around the robot or a frontier.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dims: [usize; 3],
    pub resolution: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            dims: [32, 32, 16],
            resolution: 0.2,
        }
    }
}

impl GridSpec {
    pub fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }

    /// Cube pose for a robot standing at `ground` (foot height). The bottom
    /// layer of the cube is the floor slab beneath the feet and the center is
    /// snapped to a lattice corner so an unrotated cube coincides with
    /// global voxels.
    pub fn center_for(&self, ground: Pose) -> Pose {
        let r = self.resolution;
        let snap = |v: f64, d: usize| {
            if d % 2 == 0 {
                (v / r).round() * r
            } else {
                ((v / r).floor() + 0.5) * r
            }
        };
        Pose::new(
            snap(ground.x, self.dims[0]),
            snap(ground.y, self.dims[1]),
            ground.z - r + self.dims[2] as f64 * r / 2.0,
            ground.yaw,
        )
    }
}

/// Dense voxel cube, x-fastest. Clean occupancy lives in `[0, 1]` with 0.5
/// meaning unknown; diffusion states hold unconstrained reals.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalGrid {
    dims: [usize; 3],
    resolution: f64,
    origin_pose: Pose,
    values: Vec<f32>,
}

impl LocalGrid {
    pub fn filled(dims: [usize; 3], resolution: f64, origin_pose: Pose, value: f32) -> Result<Self> {
        Self::from_values(dims, resolution, origin_pose, vec![value; dims.iter().product()])
    }

    pub fn from_values(
        dims: [usize; 3],
        resolution: f64,
        origin_pose: Pose,
        values: Vec<f32>,
    ) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!("grid dims must be positive, got {dims:?}")));
        }
        if !(resolution > 0.0) {
            return Err(Error::InvalidArgument(format!("resolution must be positive, got {resolution}")));
        }
        let n: usize = dims.iter().product();
        if values.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{} values for dims {dims:?} ({n} voxels)",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite value at voxel {bad}")));
        }
        Ok(Self {
            dims,
            resolution,
            origin_pose,
            values,
        })
    }

    /// Same geometry, new values.
    pub fn with_values(&self, values: Vec<f32>) -> Result<Self> {
        Self::from_values(self.dims, self.resolution, self.origin_pose, values)
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec {
            dims: self.dims,
            resolution: self.resolution,
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin_pose(&self) -> Pose {
        self.origin_pose
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let x = idx % self.dims[0];
        let y = (idx / self.dims[0]) % self.dims[1];
        let z = idx / (self.dims[0] * self.dims[1]);
        [x, y, z]
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.values[self.index(x, y, z)]
    }

    /// World position of the center of local voxel `idx`.
    pub fn voxel_center(&self, idx: usize) -> Point {
        let [x, y, z] = self.coords(idx);
        let r = self.resolution;
        let lx = (x as f64 + 0.5 - self.dims[0] as f64 / 2.0) * r;
        let ly = (y as f64 + 0.5 - self.dims[1] as f64 / 2.0) * r;
        let lz = (z as f64 + 0.5 - self.dims[2] as f64 / 2.0) * r;
        let (s, c) = self.origin_pose.yaw.sin_cos();
        Point::new(
            self.origin_pose.x + c * lx - s * ly,
            self.origin_pose.y + s * lx + c * ly,
            self.origin_pose.z + lz,
        )
    }

    /// Global key nearest to the center of local voxel `idx`.
    pub fn voxel_key(&self, idx: usize) -> VoxelKey {
        VoxelKey::from_point(&self.voxel_center(idx), self.resolution)
    }

    /// Local voxel containing world point `p`, if inside the cube.
    pub fn locate(&self, p: &Point) -> Option<usize> {
        let (s, c) = self.origin_pose.yaw.sin_cos();
        let dx = p.x - self.origin_pose.x;
        let dy = p.y - self.origin_pose.y;
        let local = [c * dx + s * dy, -s * dx + c * dy, p.z - self.origin_pose.z];
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let f = local[a] / self.resolution + self.dims[a] as f64 / 2.0;
            if f < 0.0 || f >= self.dims[a] as f64 {
                return None;
            }
            idx[a] = f as usize;
        }
        Some(self.index(idx[0], idx[1], idx[2]))
    }
}

/// Keys of all voxels whose value is at or above `threshold`.
pub fn binarize(grid: &LocalGrid, threshold: f32) -> Result<BTreeSet<VoxelKey>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "binarize threshold must lie in (0, 1), got {threshold}"
        )));
    }
    Ok(grid
        .values
        .iter()
        .enumerate()
        .filter(|(_, v)| **v >= threshold)
        .map(|(i, _)| grid.voxel_key(i))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(dims: [usize; 3], values: Vec<f32>) -> LocalGrid {
        LocalGrid::from_values(dims, 0.2, Pose::new(0.0, 0.0, 0.0, 0.0), values).unwrap()
    }

    #[test]
    fn binarize_threshold_is_inclusive() {
        let g = grid([4, 2, 2], vec![0.5; 16]);
        assert_eq!(binarize(&g, 0.5).unwrap().len(), 16);
    }

    #[test]
    fn binarize_all_zero_is_empty() {
        let g = grid([4, 2, 2], vec![0.0; 16]);
        for t in [0.1, 0.5, 0.9] {
            assert!(binarize(&g, t).unwrap().is_empty());
        }
    }

    #[test]
    fn binarize_picks_exactly_the_high_cells() {
        let g = grid([3, 1, 1], vec![0.2, 0.6, 0.9]);
        let got = binarize(&g, 0.5).unwrap();
        let expected: BTreeSet<_> = [g.voxel_key(1), g.voxel_key(2)].into_iter().collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn binarize_rejects_degenerate_threshold() {
        let g = grid([1, 1, 1], vec![0.0]);
        assert!(binarize(&g, 0.0).is_err());
        assert!(binarize(&g, 1.0).is_err());
    }

    #[test]
    fn rejects_wrong_value_count_and_nan() {
        assert!(LocalGrid::from_values([2, 2, 2], 0.2, Pose::new(0.0, 0.0, 0.0, 0.0), vec![0.0; 7]).is_err());
        let mut v = vec![0.0; 8];
        v[3] = f32::NAN;
        assert!(LocalGrid::from_values([2, 2, 2], 0.2, Pose::new(0.0, 0.0, 0.0, 0.0), v).is_err());
    }

    #[test]
    fn locate_inverts_voxel_center_under_rotation() {
        let g = LocalGrid::filled([6, 4, 2], 0.25, Pose::new(1.3, -0.7, 0.5, 0.7), 0.0).unwrap();
        for idx in 0..g.len() {
            assert_eq!(g.locate(&g.voxel_center(idx)), Some(idx));
        }
    }

    #[test]
    fn snapped_center_aligns_with_lattice() {
        let spec = GridSpec::default();
        let center = spec.center_for(Pose::new(3.33, 4.71, 0.2, 0.0));
        let g = LocalGrid::filled(spec.dims, spec.resolution, center, 0.0).unwrap();
        // bottom layer is the floor slab k = 0
        assert_eq!(g.voxel_key(0).k, 0);
        let c = g.voxel_center(5);
        let key = g.voxel_key(5);
        assert!((key.center(spec.resolution) - c).norm() < 1e-9);
    }
}
