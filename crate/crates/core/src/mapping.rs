//! Running occupancy map: log-odds scan insertion, fusion of generated
//! predictions and coverage.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::grid::{logit, Cell, GlobalOccupancyMap, LocalGrid, MaskedSubmap, Provenance, VoxelKey};
use crate::sensor::Scan;
use crate::{Error, Result};

/// Inverse sensor model and clamp bounds, all as probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionParams {
    pub p_hit_sensor: f64,
    pub p_miss_sensor: f64,
    pub p_hit_diff: f64,
    pub p_miss_diff: f64,
    pub prior: f64,
    pub clamp_min: f64,
    pub clamp_max: f64,
    /// Prediction values at or above this count as predicted occupied.
    pub occupied_threshold: f32,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self {
            p_hit_sensor: 0.7,
            p_miss_sensor: 0.4,
            p_hit_diff: 0.6,
            p_miss_diff: 0.45,
            prior: 0.5,
            clamp_min: 0.12,
            clamp_max: 0.97,
            occupied_threshold: 0.5,
        }
    }
}

impl FusionParams {
    pub fn validate(&self) -> Result<()> {
        let open = |p: f64| p > 0.0 && p < 1.0;
        let all = [
            self.p_hit_sensor,
            self.p_miss_sensor,
            self.p_hit_diff,
            self.p_miss_diff,
            self.prior,
            self.clamp_min,
            self.clamp_max,
        ];
        if !all.iter().all(|p| open(*p)) {
            return Err(Error::Config("fusion probabilities must lie in (0, 1)".into()));
        }
        if self.p_hit_sensor < 0.5 || self.p_hit_diff < 0.5 || self.p_miss_sensor > 0.5 || self.p_miss_diff > 0.5 {
            return Err(Error::Config("hit likelihoods must be >= 0.5 and miss likelihoods <= 0.5".into()));
        }
        if self.p_hit_diff >= self.p_hit_sensor {
            return Err(Error::Config("p_hit_diff must be below p_hit_sensor".into()));
        }
        if self.clamp_min >= self.clamp_max {
            return Err(Error::Config("clamp_min must be below clamp_max".into()));
        }
        Ok(())
    }

    /// Fresh empty map using these priors and clamps.
    pub fn new_map(&self, resolution: f64) -> Result<GlobalOccupancyMap> {
        GlobalOccupancyMap::new(resolution, logit(self.clamp_min), logit(self.clamp_max), self.prior)
    }

    fn delta(&self, p: f64) -> f64 {
        logit(p) - logit(self.prior)
    }
}

/// Integrates one sweep. Within a scan each voxel is updated at most once and
/// a return beats a pass-through, so a ray grazing a wall cell already hit by
/// a neighbour does not cancel it.
pub fn insert_scan(map: &mut GlobalOccupancyMap, scan: &Scan, params: &FusionParams) -> Result<()> {
    if (scan.resolution - map.resolution()).abs() > 1e-12 {
        return Err(Error::ResolutionMismatch {
            map: map.resolution(),
            input: scan.resolution,
        });
    }
    let mut hits = BTreeSet::new();
    let mut free = BTreeSet::new();
    for ray in &scan.rays {
        free.extend(ray.traversed.iter().copied());
        if let Some(h) = &ray.hit {
            hits.insert(h.key);
        }
    }
    let d_miss = params.delta(params.p_miss_sensor);
    let d_hit = params.delta(params.p_hit_sensor);
    for key in free.difference(&hits) {
        map.add_log_odds(*key, d_miss, true);
    }
    for key in &hits {
        map.add_log_odds(*key, d_hit, true);
    }
    Ok(())
}

/// Scan insertion for one-shot maps: predicted cells the scan touches are
/// discarded first, so the sensor overwrites predictions instead of voting
/// against them.
pub fn insert_scan_overwriting(map: &mut GlobalOccupancyMap, scan: &Scan, params: &FusionParams) -> Result<()> {
    for ray in &scan.rays {
        for key in ray.traversed.iter().chain(ray.hit.as_ref().map(|h| &h.key)) {
            if map.get(key).is_some_and(|c| c.provenance == Provenance::Predicted) {
                map.remove(key);
            }
        }
    }
    insert_scan(map, scan, params)
}

/// Drops predicted cells inside the window of `grid`, ahead of a fresh
/// one-shot merge there.
pub fn clear_window_predictions(map: &mut GlobalOccupancyMap, grid: &LocalGrid) {
    for idx in 0..grid.len() {
        let key = grid.voxel_key(idx);
        if map.get(&key).is_some_and(|c| c.provenance == Provenance::Predicted) {
            map.remove(&key);
        }
    }
}

/// Probabilistic merge of one prediction. Only voxels the sensor never saw
/// are touched; they keep `Predicted` provenance and stay outside `O`.
pub fn fuse_prediction(
    map: &mut GlobalOccupancyMap,
    prediction: &LocalGrid,
    mask: &MaskedSubmap,
    params: &FusionParams,
) -> Result<usize> {
    check_window(map, prediction, mask)?;
    let d_hit = params.delta(params.p_hit_diff);
    let d_miss = params.delta(params.p_miss_diff);
    let mut touched = 0;
    for (idx, v) in prediction.values().iter().enumerate() {
        if mask.is_observed(idx) {
            continue;
        }
        let key = prediction.voxel_key(idx);
        if map.is_observed(&key) {
            continue;
        }
        let d = if *v >= params.occupied_threshold { d_hit } else { d_miss };
        map.add_log_odds(key, d, false);
        touched += 1;
    }
    Ok(touched)
}

/// One-shot merge: predicted-occupied unknown voxels are written as certain
/// occupancy. Callers clear the previous prediction first.
pub fn merge_one_shot(
    map: &mut GlobalOccupancyMap,
    prediction: &LocalGrid,
    mask: &MaskedSubmap,
    params: &FusionParams,
) -> Result<usize> {
    check_window(map, prediction, mask)?;
    let mut touched = 0;
    for (idx, v) in prediction.values().iter().enumerate() {
        if mask.is_observed(idx) || *v < params.occupied_threshold {
            continue;
        }
        let key = prediction.voxel_key(idx);
        if map.is_observed(&key) {
            continue;
        }
        map.set_cell(
            key,
            Cell {
                log_odds: map.clamp_max(),
                provenance: Provenance::Predicted,
            },
        );
        touched += 1;
    }
    Ok(touched)
}

fn check_window(map: &GlobalOccupancyMap, prediction: &LocalGrid, mask: &MaskedSubmap) -> Result<()> {
    if !mask.aligned_with(prediction) {
        return Err(Error::ShapeMismatch("prediction is not aligned with its mask window".into()));
    }
    if (prediction.resolution() - map.resolution()).abs() > 1e-12 {
        return Err(Error::ResolutionMismatch {
            map: map.resolution(),
            input: prediction.resolution(),
        });
    }
    Ok(())
}

/// Drops every cell that only ever held predictions.
pub fn clear_predictions(map: &mut GlobalOccupancyMap) {
    map.retain(|_, c| c.provenance == Provenance::Sensed);
}

/// Fraction of `target` the sensor has observed. Predicted cells do not count.
pub fn coverage(map: &GlobalOccupancyMap, target: &[VoxelKey]) -> Result<f64> {
    if target.is_empty() {
        return Err(Error::InvalidArgument("coverage of an empty target".into()));
    }
    let seen = target.iter().filter(|k| map.is_observed(k)).count();
    Ok(seen as f64 / target.len() as f64)
}
