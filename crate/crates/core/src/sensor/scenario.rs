//! Procedural ground-truth worlds.
//!
//! Every world is carved out of solid rock: a one-voxel floor slab at `k = 0`,
//! a ceiling slab on the top layer and free space wherever a room, corridor or
//! pit was carved. Robots stand on the slab, so foot height is one voxel.

use std::f64::consts::PI;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GroundTruthWorld, Material};
use crate::grid::{Pose, VoxelKey};
use crate::{Error, Result};

pub const WORLD_HEIGHT: f64 = 3.2;
/// Interior cells up to this height make up the exploration target.
pub const TARGET_HEIGHT: f64 = 2.0;
pub const GLASS_HEIGHT: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// L-shaped hallway with a single right-angle turn.
    CorridorCorner,
    /// Four hallways joined by four turns around a solid core.
    SquareLoop,
    /// Open room; the robot starts in the middle over its own blind spot.
    StartupRoom,
    /// Walkway running beside a pit fenced by a lidar-transparent railing.
    GlassRailing,
    /// Random rooms, corridors, clutter and the occasional fenced pit.
    RandomRooms,
}

impl ScenarioKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioKind::CorridorCorner => "corridor_corner",
            ScenarioKind::SquareLoop => "square_loop",
            ScenarioKind::StartupRoom => "startup_room",
            ScenarioKind::GlassRailing => "glass_railing",
            ScenarioKind::RandomRooms => "random_rooms",
        }
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "corridor_corner" => Ok(ScenarioKind::CorridorCorner),
            "square_loop" => Ok(ScenarioKind::SquareLoop),
            "startup_room" => Ok(ScenarioKind::StartupRoom),
            "glass_railing" => Ok(ScenarioKind::GlassRailing),
            "random_rooms" => Ok(ScenarioKind::RandomRooms),
            other => Err(Error::UnknownScenario(other.into())),
        }
    }
}

impl std::fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub seed: u64,
    pub world: GroundTruthWorld,
    pub start_poses: Vec<Pose>,
    /// Voxels that count toward exploration coverage, sorted.
    pub target: Vec<VoxelKey>,
    /// Planar waypoints for the scripted reference agent.
    pub tour: Vec<(f64, f64)>,
    /// Columns `(i, j)` with no floor.
    pub drop_zone: Vec<(i32, i32)>,
    /// Traversal scenarios end when the robot gets here.
    pub goal: Option<(f64, f64)>,
}

impl Scenario {
    pub fn is_drop_column(&self, i: i32, j: i32) -> bool {
        self.drop_zone.binary_search(&(i, j)).is_ok()
    }
}

/// Builds the named scenario. Fixed layouts use `seed` only to jitter start
/// poses; `random_rooms` derives its whole layout from it.
pub fn make_world(kind: ScenarioKind, seed: u64, resolution: f64) -> Result<Scenario> {
    if !(resolution > 0.0 && resolution <= 0.5) {
        return Err(Error::InvalidArgument(format!("world resolution {resolution} outside (0, 0.5]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_3a11);
    let foot = resolution;
    let scenario = match kind {
        ScenarioKind::CorridorCorner => {
            let mut b = Builder::new(resolution, 12.0, 12.0);
            b.carve(1.0, 1.0, 11.0, 3.0);
            b.carve(9.0, 1.0, 11.0, 11.0);
            let x = rng.random_range(1.6..2.6);
            let y = rng.random_range(1.5..2.5);
            let mut s = b.finish(
                kind,
                seed,
                vec![Pose::new(x, y, foot, 0.0)],
                vec![(x, y), (10.0, 2.0), (10.0, 10.2)],
            );
            s.goal = Some((10.0, 10.2));
            s
        }
        ScenarioKind::SquareLoop => {
            let mut b = Builder::new(resolution, 14.0, 14.0);
            b.carve(1.0, 1.0, 13.0, 3.0);
            b.carve(11.0, 1.0, 13.0, 13.0);
            b.carve(1.0, 11.0, 13.0, 13.0);
            b.carve(1.0, 1.0, 3.0, 13.0);
            let corners = [(2.0, 2.0), (12.0, 2.0), (12.0, 12.0), (2.0, 12.0)];
            let c = rng.random_range(0..4usize);
            let (cx, cy) = corners[c];
            let start = Pose::new(
                cx + rng.random_range(-0.3..0.3),
                cy + rng.random_range(-0.3..0.3),
                foot,
                rng.random_range(0.0..2.0 * PI),
            );
            let mut tour = vec![(start.x, start.y)];
            for s in 1..=4 {
                tour.push(corners[(c + s) % 4]);
            }
            b.finish(kind, seed, vec![start], tour)
        }
        ScenarioKind::StartupRoom => {
            let mut b = Builder::new(resolution, 10.0, 10.0);
            b.carve(1.0, 1.0, 9.0, 9.0);
            let start = Pose::new(
                5.0 + rng.random_range(-0.5..0.5),
                5.0 + rng.random_range(-0.5..0.5),
                foot,
                rng.random_range(0.0..2.0 * PI),
            );
            let tour = vec![(start.x, start.y), (2.5, 2.5), (7.5, 2.5), (7.5, 7.5), (2.5, 7.5)];
            b.finish(kind, seed, vec![start], tour)
        }
        ScenarioKind::GlassRailing => {
            let mut b = Builder::new(resolution, 14.0, 8.0);
            b.carve(1.0, 1.0, 13.0, 4.0 + 0.99 * resolution);
            b.glass(1.0, 4.0, 13.0, 4.0 + 0.99 * resolution, GLASS_HEIGHT);
            b.pit(1.0, 4.0 + 0.99 * resolution, 13.0, 7.0);
            let start = Pose::new(
                2.0 + rng.random_range(-0.4..0.4),
                2.0 + rng.random_range(-0.3..0.3),
                foot,
                rng.random_range(-0.5..0.5),
            );
            let mut s = b.finish(kind, seed, vec![start], vec![(start.x, start.y), (12.0, 2.0)]);
            s.goal = Some((12.0, 2.0));
            s
        }
        ScenarioKind::RandomRooms => random_rooms(resolution, &mut rng, seed),
    };
    Ok(scenario)
}

fn random_rooms(resolution: f64, rng: &mut ChaCha8Rng, seed: u64) -> Scenario {
    const SIZE: f64 = 16.0;
    let mut b = Builder::new(resolution, SIZE, SIZE);
    let n_rooms = rng.random_range(3..=5);
    let mut rooms = Vec::new();
    for _ in 0..n_rooms {
        let w = rng.random_range(3.0..6.0);
        let h = rng.random_range(3.0..6.0);
        let x0 = rng.random_range(1.0..SIZE - 1.0 - w);
        let y0 = rng.random_range(1.0..SIZE - 1.0 - h);
        rooms.push((x0, y0, x0 + w, y0 + h));
    }
    for r in &rooms {
        b.carve(r.0, r.1, r.2, r.3);
    }
    let center = |r: &(f64, f64, f64, f64)| ((r.0 + r.2) / 2.0, (r.1 + r.3) / 2.0);
    for pair in rooms.windows(2) {
        let (ax, ay) = center(&pair[0]);
        let (bx, by) = center(&pair[1]);
        let half = rng.random_range(0.8..1.2);
        b.carve(ax.min(bx) - half, ay - half, ax.max(bx) + half, ay + half);
        b.carve(bx - half, ay.min(by) - half, bx + half, ay.max(by) + half);
    }
    // clutter: pillars and low boxes, kept off room centers
    for r in &rooms {
        let (cx, cy) = center(r);
        for _ in 0..rng.random_range(0..=3) {
            let s = rng.random_range(0.4..0.9);
            let x = rng.random_range(r.0..(r.2 - s));
            let y = rng.random_range(r.1..(r.3 - s));
            if (x + s / 2.0 - cx).abs() < 1.2 && (y + s / 2.0 - cy).abs() < 1.2 {
                continue;
            }
            let height = if rng.random_bool(0.5) {
                WORLD_HEIGHT
            } else {
                rng.random_range(0.4..1.2)
            };
            b.block(x, y, x + s, y + s, height);
        }
    }
    if rooms.len() > 1 && rng.random_bool(0.35) {
        let r = rooms[rng.random_range(1..rooms.len())];
        let w = rng.random_range(1.2..2.4f64).min(r.2 - r.0 - 0.8);
        let h = rng.random_range(1.2..2.4f64).min(r.3 - r.1 - 0.8);
        if w > 0.6 && h > 0.6 {
            let x0 = rng.random_range(r.0 + 0.4..r.2 - 0.4 - w + 1e-6);
            let y0 = rng.random_range(r.1 + 0.4..r.3 - 0.4 - h + 1e-6);
            b.pit(x0, y0, x0 + w, y0 + h);
            b.fence_pits(GLASS_HEIGHT);
        }
    }
    let (sx, sy) = center(&rooms[0]);
    let start = Pose::new(sx, sy, resolution, rng.random_range(0.0..2.0 * PI));
    b.clear_column_around(sx, sy, 0.6);
    let tour = rooms.iter().map(center).collect();
    b.finish(ScenarioKind::RandomRooms, seed, vec![start], tour)
}

struct Builder {
    world: GroundTruthWorld,
    interior: Vec<bool>,
    pit: Vec<bool>,
}

impl Builder {
    fn new(resolution: f64, size_x: f64, size_y: f64) -> Self {
        let nx = (size_x / resolution).round() as usize;
        let ny = (size_y / resolution).round() as usize;
        let nz = (WORLD_HEIGHT / resolution).round() as usize;
        let world = GroundTruthWorld::new(resolution, [nx, ny, nz], Material::Solid)
            .expect("positive world dims");
        Self {
            world,
            interior: vec![false; nx * ny],
            pit: vec![false; nx * ny],
        }
    }

    fn nx(&self) -> usize {
        self.world.dims()[0]
    }

    fn nz(&self) -> usize {
        self.world.dims()[2]
    }

    /// Columns whose center lies inside the rectangle.
    fn columns(&self, x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<(i32, i32)> {
        let r = self.world.resolution();
        let [nx, ny, _] = self.world.dims();
        let mut out = Vec::new();
        for j in 0..ny {
            let cy = (j as f64 + 0.5) * r;
            if cy < y0 || cy > y1 {
                continue;
            }
            for i in 0..nx {
                let cx = (i as f64 + 0.5) * r;
                if cx >= x0 && cx <= x1 {
                    out.push((i as i32, j as i32));
                }
            }
        }
        out
    }

    fn fill(&mut self, cols: &[(i32, i32)], k_range: std::ops::Range<usize>, m: Material) {
        for &(i, j) in cols {
            for k in k_range.clone() {
                self.world.set(&VoxelKey::new(i, j, k as i32), m);
            }
        }
    }

    fn carve(&mut self, x0: f64, y0: f64, x1: f64, y1: f64) {
        let cols = self.columns(x0, y0, x1, y1);
        let nz = self.nz();
        self.fill(&cols, 1..nz - 1, Material::Free);
        let nx = self.nx();
        for (i, j) in cols {
            self.interior[i as usize + nx * j as usize] = true;
        }
    }

    fn pit(&mut self, x0: f64, y0: f64, x1: f64, y1: f64) {
        let cols = self.columns(x0, y0, x1, y1);
        let nz = self.nz();
        self.fill(&cols, 0..nz - 1, Material::Free);
        let nx = self.nx();
        for (i, j) in cols {
            self.interior[i as usize + nx * j as usize] = true;
            self.pit[i as usize + nx * j as usize] = true;
        }
    }

    fn height_layers(&self, height: f64) -> usize {
        ((height / self.world.resolution()).round() as usize).clamp(1, self.nz() - 2)
    }

    fn glass(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, height: f64) {
        let cols = self.columns(x0, y0, x1, y1);
        let top = self.height_layers(height);
        self.fill(&cols, 1..top + 1, Material::Glass);
    }

    fn block(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, height: f64) {
        let cols = self.columns(x0, y0, x1, y1);
        let top = self.height_layers(height);
        self.fill(&cols, 1..top + 1, Material::Solid);
    }

    /// Rings every pit with a one-voxel glass railing on interior floor.
    fn fence_pits(&mut self, height: f64) {
        let [nx, ny, _] = self.world.dims();
        let top = self.height_layers(height);
        let mut ring = Vec::new();
        for j in 0..ny as i32 {
            for i in 0..nx as i32 {
                let idx = i as usize + nx * j as usize;
                if self.pit[idx] || !self.interior[idx] {
                    continue;
                }
                let near_pit = (-1..=1).any(|dj| {
                    (-1..=1).any(|di| {
                        let (a, b) = (i + di, j + dj);
                        a >= 0 && b >= 0 && (a as usize) < nx && (b as usize) < ny && self.pit[a as usize + nx * b as usize]
                    })
                });
                if near_pit {
                    ring.push((i, j));
                }
            }
        }
        self.fill(&ring, 1..top + 1, Material::Glass);
    }

    fn clear_column_around(&mut self, x: f64, y: f64, radius: f64) {
        let cols: Vec<_> = self
            .columns(x - radius, y - radius, x + radius, y + radius)
            .into_iter()
            .filter(|&(i, j)| self.interior[i as usize + self.nx() * j as usize] && !self.pit[i as usize + self.nx() * j as usize])
            .collect();
        let nz = self.nz();
        self.fill(&cols, 1..nz - 1, Material::Free);
    }

    fn finish(self, kind: ScenarioKind, seed: u64, start_poses: Vec<Pose>, tour: Vec<(f64, f64)>) -> Scenario {
        let [nx, ny, nz] = self.world.dims();
        let r = self.world.resolution();
        let k_max = ((TARGET_HEIGHT / r).floor() as usize).min(nz - 1);
        let mut target = Vec::new();
        let mut drop_zone = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                let idx = i + nx * j;
                if !self.interior[idx] {
                    continue;
                }
                if self.pit[idx] {
                    drop_zone.push((i as i32, j as i32));
                }
                for k in 0..k_max {
                    let key = VoxelKey::new(i as i32, j as i32, k as i32);
                    if k == 0 || self.world.material(&key) == Material::Free {
                        target.push(key);
                    }
                }
            }
        }
        target.sort_unstable();
        drop_zone.sort_unstable();
        Scenario {
            kind,
            seed,
            world: self.world,
            start_poses,
            target,
            tour,
            drop_zone,
            goal: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_name_is_an_error() {
        assert!(matches!("mars_base".parse::<ScenarioKind>(), Err(Error::UnknownScenario(_))));
        for k in [
            ScenarioKind::CorridorCorner,
            ScenarioKind::SquareLoop,
            ScenarioKind::StartupRoom,
            ScenarioKind::GlassRailing,
            ScenarioKind::RandomRooms,
        ] {
            assert_eq!(k.as_str().parse::<ScenarioKind>().unwrap(), k);
        }
    }

    #[test]
    fn start_poses_stand_on_floor_in_free_space() {
        for kind in [
            ScenarioKind::CorridorCorner,
            ScenarioKind::SquareLoop,
            ScenarioKind::StartupRoom,
            ScenarioKind::GlassRailing,
            ScenarioKind::RandomRooms,
        ] {
            for seed in 0..5 {
                let s = make_world(kind, seed, 0.2).unwrap();
                for p in &s.start_poses {
                    let foot = VoxelKey::from_point(&p.position(), 0.2);
                    assert_eq!(s.world.material(&foot), Material::Free, "{kind} seed {seed}");
                    assert_eq!(s.world.material(&foot.offset(0, 0, -1)), Material::Solid, "{kind} seed {seed}");
                }
            }
        }
    }
}
