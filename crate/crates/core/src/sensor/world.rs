use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::grid::io::{parse_field, split_header, write_atomic};
use crate::grid::{LocalGrid, Point, VoxelKey};
use crate::{Error, Result};

pub const WORLD_MAGIC: &str = "OCCW1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Material {
    Free = 0,
    Solid = 1,
    /// Blocks the robot but is invisible to the lidar.
    Glass = 2,
}

impl Material {
    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(Material::Free),
            1 => Ok(Material::Solid),
            2 => Ok(Material::Glass),
            _ => Err(Error::MalformedHeader(format!("unknown material byte {b}"))),
        }
    }
}

/// Dense ground-truth voxel world with its lower corner at the lattice origin.
/// Everything outside the bounds is open void.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthWorld {
    resolution: f64,
    dims: [usize; 3],
    cells: Vec<Material>,
}

impl GroundTruthWorld {
    pub fn new(resolution: f64, dims: [usize; 3], fill: Material) -> Result<Self> {
        if !(resolution > 0.0) || dims.iter().any(|d| *d == 0) {
            return Err(Error::InvalidArgument(format!(
                "world needs positive resolution and dims, got {resolution} / {dims:?}"
            )));
        }
        Ok(Self {
            resolution,
            dims,
            cells: vec![fill; dims.iter().product()],
        })
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    /// World AABB as (min, max) corners.
    pub fn bounds(&self) -> (Point, Point) {
        let r = self.resolution;
        (
            Point::zeros(),
            Point::new(self.dims[0] as f64 * r, self.dims[1] as f64 * r, self.dims[2] as f64 * r),
        )
    }

    pub fn contains_key(&self, key: &VoxelKey) -> bool {
        key.i >= 0
            && key.j >= 0
            && key.k >= 0
            && (key.i as usize) < self.dims[0]
            && (key.j as usize) < self.dims[1]
            && (key.k as usize) < self.dims[2]
    }

    pub fn contains_point(&self, p: &Point) -> bool {
        let (lo, hi) = self.bounds();
        (0..3).all(|a| p[a] >= lo[a] && p[a] < hi[a])
    }

    fn offset(&self, key: &VoxelKey) -> usize {
        key.i as usize + self.dims[0] * (key.j as usize + self.dims[1] * key.k as usize)
    }

    pub fn material(&self, key: &VoxelKey) -> Material {
        if self.contains_key(key) {
            self.cells[self.offset(key)]
        } else {
            Material::Free
        }
    }

    pub fn set(&mut self, key: &VoxelKey, m: Material) {
        if self.contains_key(key) {
            let o = self.offset(key);
            self.cells[o] = m;
        }
    }

    /// Solid and glass both stop the robot.
    pub fn is_blocking(&self, key: &VoxelKey) -> bool {
        self.material(key) != Material::Free
    }

    /// Ground-truth occupancy used for complete training / evaluation cubes.
    pub fn occupancy(&self, key: &VoxelKey) -> f32 {
        if self.is_blocking(key) {
            1.0
        } else {
            0.0
        }
    }

    /// Complete (fully known) cube cut at `template`'s pose.
    pub fn local_grid(&self, template: &LocalGrid) -> Result<LocalGrid> {
        let values = (0..template.len())
            .map(|i| self.occupancy(&template.voxel_key(i)))
            .collect();
        template.with_values(values)
    }

    pub fn count(&self, m: Material) -> usize {
        self.cells.iter().filter(|c| **c == m).count()
    }

    pub fn encode(&self) -> Vec<u8> {
        let [nx, ny, nz] = self.dims;
        let header = format!("{WORLD_MAGIC} {nx} {ny} {nz} {}\n", self.resolution);
        let mut out = header.into_bytes();
        out.extend(self.cells.iter().map(|m| *m as u8));
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let (fields, payload) = split_header(bytes, WORLD_MAGIC)?;
        if fields.len() != 5 {
            return Err(Error::MalformedHeader(format!("expected 5 header fields, found {}", fields.len())));
        }
        let dims = [
            parse_field::<usize>(&fields, 1, "Nx")?,
            parse_field::<usize>(&fields, 2, "Ny")?,
            parse_field::<usize>(&fields, 3, "Nz")?,
        ];
        let resolution: f64 = parse_field(&fields, 4, "resolution")?;
        let n: usize = dims.iter().product();
        if payload.len() != n {
            return Err(Error::Truncated {
                expected: n,
                found: payload.len(),
            });
        }
        let cells = payload.iter().map(|b| Material::from_byte(*b)).collect::<Result<_>>()?;
        let mut w = Self::new(resolution, dims, Material::Free)?;
        w.cells = cells;
        Ok(w)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outside_bounds_is_void() {
        let w = GroundTruthWorld::new(0.2, [4, 4, 4], Material::Solid).unwrap();
        assert_eq!(w.material(&VoxelKey::new(-1, 0, 0)), Material::Free);
        assert_eq!(w.material(&VoxelKey::new(0, 0, 4)), Material::Free);
        assert_eq!(w.material(&VoxelKey::new(3, 3, 3)), Material::Solid);
    }

    #[test]
    fn world_bytes_round_trip() {
        let mut w = GroundTruthWorld::new(0.25, [3, 2, 2], Material::Free).unwrap();
        w.set(&VoxelKey::new(1, 1, 0), Material::Glass);
        w.set(&VoxelKey::new(2, 0, 1), Material::Solid);
        let back = GroundTruthWorld::decode(&w.encode()).unwrap();
        assert_eq!(back, w);
        let mut bad = w.encode();
        *bad.last_mut().unwrap() = 9;
        assert!(GroundTruthWorld::decode(&bad).is_err());
    }
}
