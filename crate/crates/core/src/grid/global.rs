use serde::{Deserialize, Serialize};

use super::{logit, DetHashMap, LocalGrid, Pose, VoxelKey};
use crate::{Error, Result};

/// Where a cell's evidence came from. A sensed cell belongs to the observed
/// set for good; a predicted cell only ever received generated evidence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Sensed,
    Predicted,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::Sensed => "sensed",
            Provenance::Predicted => "predicted",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub log_odds: f64,
    pub provenance: Provenance,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VoxelState {
    Unknown,
    Free,
    Occupied,
}

/// Sparse running occupancy map keyed by lattice index.
///
/// Mutation goes through `&mut self`, so a snapshot taken with
/// [`extract_submap`] always sees a consistent map.
#[derive(Clone, Debug)]
pub struct GlobalOccupancyMap {
    resolution: f64,
    cells: DetHashMap<VoxelKey, Cell>,
    clamp_min: f64,
    clamp_max: f64,
    prior: f64,
}

impl PartialEq for GlobalOccupancyMap {
    fn eq(&self, other: &Self) -> bool {
        self.resolution == other.resolution
            && self.clamp_min == other.clamp_min
            && self.clamp_max == other.clamp_max
            && self.prior == other.prior
            && self.cells.len() == other.cells.len()
            && self.cells.iter().all(|(k, c)| other.cells.get(k) == Some(c))
    }
}

impl GlobalOccupancyMap {
    pub fn new(resolution: f64, clamp_min: f64, clamp_max: f64, prior: f64) -> Result<Self> {
        if !(resolution > 0.0) {
            return Err(Error::InvalidArgument(format!("resolution must be positive, got {resolution}")));
        }
        if !(clamp_min < clamp_max) {
            return Err(Error::InvalidArgument(format!(
                "clamp bounds out of order: {clamp_min} >= {clamp_max}"
            )));
        }
        if !(prior > 0.0 && prior < 1.0) {
            return Err(Error::InvalidArgument(format!("prior must lie in (0, 1), got {prior}")));
        }
        Ok(Self {
            resolution,
            cells: DetHashMap::default(),
            clamp_min,
            clamp_max,
            prior,
        })
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn clamp_min(&self) -> f64 {
        self.clamp_min
    }

    pub fn clamp_max(&self) -> f64 {
        self.clamp_max
    }

    pub fn prior(&self) -> f64 {
        self.prior
    }

    /// Log-odds of a cell that has not received any evidence yet.
    pub fn prior_log_odds(&self) -> f64 {
        logit(self.prior)
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn get(&self, key: &VoxelKey) -> Option<&Cell> {
        self.cells.get(key)
    }

    pub fn state(&self, key: &VoxelKey) -> VoxelState {
        match self.cells.get(key) {
            None => VoxelState::Unknown,
            Some(c) if c.log_odds > 0.0 => VoxelState::Occupied,
            Some(_) => VoxelState::Free,
        }
    }

    pub fn is_occupied(&self, key: &VoxelKey) -> bool {
        self.state(key) == VoxelState::Occupied
    }

    /// Member of the observed set: touched by a sensor ray at least once.
    pub fn is_observed(&self, key: &VoxelKey) -> bool {
        matches!(self.cells.get(key), Some(c) if c.provenance == Provenance::Sensed)
    }

    pub fn probability(&self, key: &VoxelKey) -> Option<f64> {
        self.cells.get(key).map(|c| super::logistic(c.log_odds))
    }

    /// Cells in key order.
    pub fn sorted_cells(&self) -> Vec<(VoxelKey, Cell)> {
        let mut out: Vec<_> = self.cells.iter().map(|(k, c)| (*k, *c)).collect();
        out.sort_unstable_by_key(|(k, _)| *k);
        out
    }

    pub fn keys(&self) -> impl Iterator<Item = &VoxelKey> {
        self.cells.keys()
    }

    pub fn observed_count(&self) -> usize {
        self.cells.values().filter(|c| c.provenance == Provenance::Sensed).count()
    }

    /// Adds `delta` to the cell's log-odds (creating it at the prior) and
    /// clamps. `sensed` promotes the cell into the observed set; it never
    /// demotes.
    pub fn add_log_odds(&mut self, key: VoxelKey, delta: f64, sensed: bool) {
        let prior = self.prior_log_odds();
        let (lo, hi) = (self.clamp_min, self.clamp_max);
        let cell = self.cells.entry(key).or_insert(Cell {
            log_odds: prior,
            provenance: Provenance::Predicted,
        });
        cell.log_odds = (cell.log_odds + delta).clamp(lo, hi);
        if sensed {
            cell.provenance = Provenance::Sensed;
        }
    }

    /// Overwrites a cell outright. Used by the loader and one-shot merging.
    pub fn set_cell(&mut self, key: VoxelKey, cell: Cell) {
        let log_odds = cell.log_odds.clamp(self.clamp_min, self.clamp_max);
        self.cells.insert(key, Cell { log_odds, ..cell });
    }

    pub fn remove(&mut self, key: &VoxelKey) -> Option<Cell> {
        self.cells.remove(key)
    }

    pub fn retain(&mut self, mut keep: impl FnMut(&VoxelKey, &Cell) -> bool) {
        self.cells.retain(|k, c| keep(k, c));
    }
}

/// A local cube cut from the map together with which voxels were observed
/// occupied / free. Everything else is unknown.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedSubmap {
    pub grid: LocalGrid,
    pub occupied: Vec<bool>,
    pub unoccupied: Vec<bool>,
}

impl MaskedSubmap {
    pub fn new(grid: LocalGrid, occupied: Vec<bool>, unoccupied: Vec<bool>) -> Result<Self> {
        if occupied.len() != grid.len() || unoccupied.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "mask lengths {}/{} for a grid of {} voxels",
                occupied.len(),
                unoccupied.len(),
                grid.len()
            )));
        }
        if let Some(i) = occupied.iter().zip(&unoccupied).position(|(o, u)| *o && *u) {
            return Err(Error::InvalidArgument(format!("voxel {i} both occupied and unoccupied")));
        }
        Ok(Self {
            grid,
            occupied,
            unoccupied,
        })
    }

    /// Builds a submap from a clean observation with an explicit observed
    /// mask: observed voxels with value >= 0.5 are occupied, the rest free.
    pub fn from_observation(grid: LocalGrid, observed: &[bool]) -> Result<Self> {
        if observed.len() != grid.len() {
            return Err(Error::ShapeMismatch("observed mask length".into()));
        }
        let occupied = grid.values().iter().zip(observed).map(|(v, o)| *o && *v >= 0.5).collect();
        let unoccupied = grid.values().iter().zip(observed).map(|(v, o)| *o && *v < 0.5).collect();
        let values = grid
            .values()
            .iter()
            .zip(observed)
            .map(|(v, o)| if !*o { 0.5 } else if *v >= 0.5 { 1.0 } else { 0.0 })
            .collect();
        Self::new(grid.with_values(values)?, occupied, unoccupied)
    }

    #[inline]
    pub fn is_observed(&self, idx: usize) -> bool {
        self.occupied[idx] || self.unoccupied[idx]
    }

    pub fn observed_count(&self) -> usize {
        (0..self.grid.len()).filter(|&i| self.is_observed(i)).count()
    }

    pub fn unknown_fraction(&self) -> f64 {
        1.0 - self.observed_count() as f64 / self.grid.len() as f64
    }

    /// True when both cubes share shape, voxel size and pose.
    pub fn aligned_with(&self, grid: &LocalGrid) -> bool {
        self.grid.dims() == grid.dims()
            && self.grid.resolution() == grid.resolution()
            && self.grid.origin_pose() == grid.origin_pose()
    }
}

/// Cuts a cube centered at `center` out of the map, rotated by the center's
/// yaw, using nearest-voxel lookup. Occupied cells become 1.0 (in `M_o`),
/// known free cells 0.0 (in `M_u`), absent cells 0.5 (unknown).
pub fn extract_submap(
    map: &GlobalOccupancyMap,
    center: Pose,
    dims: [usize; 3],
    resolution: f64,
) -> Result<MaskedSubmap> {
    window(map, center, dims, resolution, false)
}

/// Like [`extract_submap`] but only sensor-observed cells count as known;
/// predicted cells read as unknown. This is the conditioning input for the
/// sampler, which must never treat earlier predictions as observations.
pub fn extract_sensed_submap(
    map: &GlobalOccupancyMap,
    center: Pose,
    dims: [usize; 3],
    resolution: f64,
) -> Result<MaskedSubmap> {
    window(map, center, dims, resolution, true)
}

fn window(
    map: &GlobalOccupancyMap,
    center: Pose,
    dims: [usize; 3],
    resolution: f64,
    sensed_only: bool,
) -> Result<MaskedSubmap> {
    if (resolution - map.resolution()).abs() > 1e-12 {
        return Err(Error::ResolutionMismatch {
            map: map.resolution(),
            input: resolution,
        });
    }
    let template = LocalGrid::filled(dims, resolution, center, 0.5)?;
    let n = template.len();
    let mut values = vec![0.5f32; n];
    let mut occupied = vec![false; n];
    let mut unoccupied = vec![false; n];
    for idx in 0..n {
        let key = template.voxel_key(idx);
        if sensed_only && !map.is_observed(&key) {
            continue;
        }
        match map.state(&key) {
            VoxelState::Unknown => {}
            VoxelState::Occupied => {
                values[idx] = 1.0;
                occupied[idx] = true;
            }
            VoxelState::Free => {
                values[idx] = 0.0;
                unoccupied[idx] = true;
            }
        }
    }
    MaskedSubmap::new(template.with_values(values)?, occupied, unoccupied)
}
