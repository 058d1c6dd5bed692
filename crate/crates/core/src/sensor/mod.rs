//! Ground truth and the simulated lidar.

mod lidar;
mod raycast;
mod scenario;
mod world;

pub use lidar::{hit_on_solid_boundary, simulate_scan, LidarConfig, Scan, ScanRay};
pub use raycast::{raycast, RayHit, RayResult, VoxelTraversal};
pub use scenario::{make_world, Scenario, ScenarioKind, GLASS_HEIGHT, TARGET_HEIGHT, WORLD_HEIGHT};
pub use world::{GroundTruthWorld, Material, WORLD_MAGIC};
