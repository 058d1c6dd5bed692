use std::f64::consts::{FRAC_PI_2, PI};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::raycast::{raycast, RayHit, VoxelTraversal};
use super::{GroundTruthWorld, Material};
use crate::grid::{Point, Pose, VoxelKey};
use crate::{Error, Result};

/// Spinning multi-ring lidar. Rings are spread evenly over `vfov`; any ray
/// whose angle from straight down is within `blind_cone_half_angle` is
/// dropped (the body shadows it).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LidarConfig {
    pub n_azimuth: usize,
    pub n_rings: usize,
    /// (min, max) elevation in radians.
    pub vfov: (f64, f64),
    pub max_range: f64,
    pub blind_cone_half_angle: f64,
    pub mount_height: f64,
    /// Standard deviation of Gaussian range jitter; 0 disables it.
    pub range_noise_std: f64,
    pub noise_seed: u64,
}

impl Default for LidarConfig {
    fn default() -> Self {
        Self {
            n_azimuth: 180,
            n_rings: 32,
            vfov: (-PI / 4.0, PI / 6.0),
            max_range: 8.0,
            blind_cone_half_angle: PI / 3.0,
            mount_height: 0.6,
            range_noise_std: 0.0,
            noise_seed: 0,
        }
    }
}

impl LidarConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_range > 0.0) {
            return Err(Error::InvalidArgument("lidar max_range must be positive".into()));
        }
        if self.n_azimuth == 0 || self.n_rings == 0 {
            return Err(Error::InvalidArgument("lidar needs at least one ring and azimuth".into()));
        }
        if self.vfov.0 > self.vfov.1 {
            return Err(Error::InvalidArgument("lidar vfov min exceeds max".into()));
        }
        Ok(())
    }

    pub fn ring_elevation(&self, ring: usize) -> f64 {
        if self.n_rings == 1 {
            return self.vfov.0;
        }
        self.vfov.0 + (self.vfov.1 - self.vfov.0) * ring as f64 / (self.n_rings - 1) as f64
    }

    pub fn in_blind_cone(&self, elevation: f64) -> bool {
        // angle measured from the downward axis
        FRAC_PI_2 + elevation <= self.blind_cone_half_angle + 1e-9
    }

    /// Unit directions of every emitted ray for a sensor facing `yaw`,
    /// ring-major.
    pub fn ray_directions(&self, yaw: f64) -> Vec<Point> {
        let mut dirs = Vec::with_capacity(self.n_rings * self.n_azimuth);
        for ring in 0..self.n_rings {
            let el = self.ring_elevation(ring);
            if self.in_blind_cone(el) {
                continue;
            }
            let (se, ce) = el.sin_cos();
            for a in 0..self.n_azimuth {
                let az = yaw + 2.0 * PI * a as f64 / self.n_azimuth as f64;
                let (sa, ca) = az.sin_cos();
                dirs.push(Point::new(ce * ca, ce * sa, se));
            }
        }
        dirs
    }

    pub fn sensor_origin(&self, pose: &Pose) -> Point {
        Point::new(pose.x, pose.y, pose.z + self.mount_height)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanRay {
    pub direction: Point,
    /// Free cells crossed before the return (or up to max range / world edge).
    pub traversed: Vec<VoxelKey>,
    pub hit: Option<RayHit>,
}

/// One lidar sweep: the sensor origin plus every emitted ray.
#[derive(Clone, Debug, PartialEq)]
pub struct Scan {
    pub origin: Point,
    pub resolution: f64,
    pub rays: Vec<ScanRay>,
}

impl Scan {
    /// The point cloud.
    pub fn points(&self) -> Vec<Point> {
        self.rays.iter().filter_map(|r| r.hit.as_ref().map(|h| h.point)).collect()
    }

    pub fn hit_count(&self) -> usize {
        self.rays.iter().filter(|r| r.hit.is_some()).count()
    }
}

/// Simulates one sweep from a robot standing at `pose`. Deterministic given
/// pose and config (range jitter draws from `noise_seed`).
pub fn simulate_scan(world: &GroundTruthWorld, pose: &Pose, config: &LidarConfig) -> Result<Scan> {
    config.validate()?;
    let origin = config.sensor_origin(pose);
    if !world.contains_point(&origin) {
        return Err(Error::OutOfBounds(format!("sensor pose {pose} outside world")));
    }
    let jitter = if config.range_noise_std > 0.0 {
        Some((
            Normal::new(0.0, config.range_noise_std).map_err(|e| Error::InvalidArgument(e.to_string()))?,
            ChaCha8Rng::seed_from_u64(config.noise_seed),
        ))
    } else {
        None
    };
    let mut jitter = jitter;
    let mut rays = Vec::new();
    for direction in config.ray_directions(pose.yaw) {
        let mut r = raycast(world, &origin, &direction, config.max_range)?;
        if let (Some((dist, rng)), Some(hit)) = (jitter.as_mut(), r.hit.as_ref()) {
            let range = (hit.distance + dist.sample(rng)).clamp(0.0, config.max_range);
            r = jittered(world, &origin, &direction, range);
        }
        rays.push(ScanRay {
            direction,
            traversed: r.traversed,
            hit: r.hit,
        });
    }
    Ok(Scan {
        origin,
        resolution: world.resolution(),
        rays,
    })
}

/// Re-derives a return measured at `range` instead of the true surface.
fn jittered(world: &GroundTruthWorld, origin: &Point, dir: &Point, range: f64) -> super::raycast::RayResult {
    let mut traversed = Vec::new();
    let mut hit_key = VoxelKey::from_point(origin, world.resolution());
    for (key, _) in VoxelTraversal::new(origin, dir, range, world.resolution()) {
        traversed.push(key);
        hit_key = key;
    }
    traversed.pop();
    let point = origin + dir * range;
    super::raycast::RayResult {
        hit: Some(RayHit {
            point,
            key: hit_key,
            distance: range,
        }),
        traversed,
    }
}

/// Column-wise check used by tests and scenario sanity checks: true when the
/// hit lies on the boundary of a solid cell.
pub fn hit_on_solid_boundary(world: &GroundTruthWorld, hit: &RayHit) -> bool {
    if world.material(&hit.key) != Material::Solid {
        return false;
    }
    let r = world.resolution();
    let lo = Point::new(hit.key.i as f64 * r, hit.key.j as f64 * r, hit.key.k as f64 * r);
    let eps = 1e-9;
    let inside = (0..3).all(|a| hit.point[a] >= lo[a] - eps && hit.point[a] <= lo[a] + r + eps);
    let on_face = (0..3).any(|a| (hit.point[a] - lo[a]).abs() < eps || (hit.point[a] - lo[a] - r).abs() < eps);
    inside && on_face
}
