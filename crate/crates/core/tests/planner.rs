use std::collections::BTreeSet;

use occugen::diffusion::{sample_batch, ScheduleConfig, Sampler};
use occugen::denoiser::OracleDenoiser;
use occugen::grid::{extract_submap, Cell, GlobalOccupancyMap, GridSpec, Point, Pose, Provenance, VoxelKey};
use occugen::mapping::{fuse_prediction, insert_scan, FusionParams};
use occugen::planner::{
    build_graph, exploration_gain_along, oracle_tour, path_crosses_drop_zone, resample_polyline, select_frontiers,
    volumetric_gain, ExploreConfig, ExplorationGraph, Explorer, Mode, PlannerParams, Vertex,
};
use occugen::sensor::{make_world, simulate_scan, GroundTruthWorld, Material, ScenarioKind};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Map that knows every voxel of the world exactly.
fn fully_known(world: &GroundTruthWorld) -> GlobalOccupancyMap {
    let fusion = FusionParams::default();
    let mut map = fusion.new_map(world.resolution()).unwrap();
    let [nx, ny, nz] = world.dims();
    for k in 0..nz as i32 {
        for j in 0..ny as i32 {
            for i in 0..nx as i32 {
                let key = VoxelKey::new(i, j, k);
                let log_odds = if world.material(&key) == Material::Solid { 5.0 } else { -5.0 };
                map.set_cell(
                    key,
                    Cell {
                        log_odds,
                        provenance: Provenance::Sensed,
                    },
                );
            }
        }
    }
    map
}

fn vertex(x: f64, gain: f64) -> Vertex {
    Vertex {
        x,
        y: 0.0,
        volumetric_gain: 0.0,
        exploration_gain: gain,
        distance: 0.0,
        parent: None,
    }
}

#[test]
fn fully_mapped_surroundings_have_zero_gain() {
    let sc = make_world(ScenarioKind::StartupRoom, 0, 0.4).unwrap();
    let map = fully_known(&sc.world);
    let p = PlannerParams::default();
    let s = sc.start_poses[0];
    assert_eq!(volumetric_gain(&map, s.x, s.y, s.z, &p), 0);
    let g = build_graph(&map, &s, &p, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert!(g.vertices.len() > 1);
    assert_eq!(g.max_gain(), 0.0);
}

/// Distinct voxels met by marching each gain ray in tiny steps, inside the
/// counted height slab.
fn replay_gain(x: f64, y: f64, foot_z: f64, p: &PlannerParams, res: f64) -> usize {
    let lidar = &p.gain_lidar;
    let o = lidar.sensor_origin(&Pose::new(x, y, foot_z, 0.0));
    let k_lo = ((foot_z - res) / res).floor() as i32;
    let k_hi = ((foot_z + p.gain_height) / res).floor() as i32;
    let mut seen = BTreeSet::new();
    let n = (lidar.max_range / 1e-4) as usize;
    for d in lidar.ray_directions(0.0) {
        for s in 0..n {
            let q: Point = o + d * (s as f64 * 1e-4);
            let key = VoxelKey::from_point(&q, res);
            if (k_lo..=k_hi).contains(&key.k) {
                seen.insert(key);
            }
        }
    }
    seen.len()
}

#[test]
fn empty_map_gain_matches_ray_replay() {
    let mut p = PlannerParams::default();
    p.gain_lidar.n_azimuth = 7;
    p.gain_lidar.n_rings = 5;
    let map = FusionParams::default().new_map(0.4).unwrap();
    let (x, y, z) = (3.13, 2.71, 0.4);
    assert_eq!(volumetric_gain(&map, x, y, z, &p), replay_gain(x, y, z, &p, 0.4));
}

#[test]
fn mapped_wall_occludes_the_space_behind_it() {
    let mut p = PlannerParams::default();
    p.gain_lidar.n_azimuth = 1;
    p.gain_lidar.n_rings = 1;
    p.gain_lidar.vfov = (0.0, 0.0);
    p.gain_lidar.max_range = 4.0;
    let res = 0.2;
    let mut map = FusionParams::default().new_map(res).unwrap();
    // sensor at z = 0.2 + 0.6; wall plane one metre ahead in +x
    let (x, y, z) = (0.1, 0.1, 0.2);
    let wall = VoxelKey::from_point(&Point::new(x + 1.0 + 0.01, y, z + 0.6), res);
    map.set_cell(
        wall,
        Cell {
            log_odds: 3.0,
            provenance: Provenance::Sensed,
        },
    );
    // cells from the sensor cell up to (not including) the wall
    assert_eq!(volumetric_gain(&map, x, y, z, &p), (wall.i - 0) as usize);
}

#[test]
fn hand_evaluated_three_vertex_path() {
    let p = PlannerParams {
        gamma_s: 0.5,
        gamma_d: 0.5,
        ..Default::default()
    };
    let gains = [4.0, 2.0, 6.0];
    let cum = [0.0, 1.0, 3.0];
    let expected = (-1.5f64).exp() * (4.0 + 2.0 * (-0.5f64).exp() + 6.0 * (-1.5f64).exp());
    assert!((exploration_gain_along(&gains, &cum, &p) - expected).abs() < 1e-12);
    assert_eq!(exploration_gain_along(&[7.0], &[0.0], &p), 7.0);
    assert_eq!(exploration_gain_along(&[0.0, 0.0], &[0.0, 2.0], &p), 0.0);
}

proptest! {
    #[test]
    fn gain_is_monotone_and_scales(
        gains in prop::collection::vec(0.0f64..100.0, 1..8),
        steps in prop::collection::vec(0.01f64..3.0, 8),
        idx in 0usize..8,
        bump in 0.0f64..50.0,
        c in 0.01f64..20.0,
    ) {
        let p = PlannerParams::default();
        let mut cum = vec![0.0];
        for s in &steps[..gains.len() - 1] {
            cum.push(cum.last().unwrap() + s);
        }
        let base = exploration_gain_along(&gains, &cum, &p);
        let mut more = gains.clone();
        more[idx % gains.len()] += bump;
        prop_assert!(exploration_gain_along(&more, &cum, &p) >= base);
        let scaled: Vec<f64> = gains.iter().map(|g| g * c).collect();
        let s = exploration_gain_along(&scaled, &cum, &p);
        prop_assert!((s - c * base).abs() <= 1e-9 * (1.0 + c * base));
    }

    #[test]
    fn frontier_selection_matches_brute_force(
        pts in prop::collection::vec((-8.0f64..8.0, -8.0f64..8.0, 0.0f64..10.0), 10),
    ) {
        let mut vertices = vec![vertex(0.0, 0.0)];
        for (x, y, g) in &pts {
            let mut v = vertex(*x, *g);
            v.y = *y;
            vertices.push(v);
        }
        let graph = ExplorationGraph { foot_z: 0.2, vertices, edges: vec![] };
        let p = PlannerParams { d_m: 2.0, n_max: 3, ..Default::default() };
        let got = select_frontiers(&graph, &p);
        // brute force: repeatedly take the best remaining admissible vertex
        let dist = |a: usize, b: usize| {
            let (va, vb) = (&graph.vertices[a], &graph.vertices[b]);
            ((va.x - vb.x).powi(2) + (va.y - vb.y).powi(2)).sqrt()
        };
        let mut want: Vec<usize> = Vec::new();
        let mut rejected: BTreeSet<usize> = BTreeSet::new();
        while want.len() < 3 {
            let mut best: Option<usize> = None;
            for i in 1..graph.vertices.len() {
                if want.contains(&i) || rejected.contains(&i) || dist(0, i) > p.fc_range {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some(b) => graph.vertices[i].exploration_gain > graph.vertices[b].exploration_gain,
                };
                if better {
                    best = Some(i);
                }
            }
            let Some(b) = best else { break };
            if want.iter().all(|w| dist(*w, b) >= p.d_m) {
                want.push(b);
            } else {
                rejected.insert(b);
            }
        }
        prop_assert_eq!(&got, &want);
        for i in 0..got.len() {
            for j in i + 1..got.len() {
                prop_assert!(dist(got[i], got[j]) >= p.d_m);
            }
        }
    }
}

#[test]
fn single_frontier_is_the_argmax_in_range() {
    let graph = ExplorationGraph {
        foot_z: 0.2,
        vertices: vec![vertex(0.0, 9.0), vertex(1.0, 3.0), vertex(8.0, 50.0), vertex(2.0, 4.0)],
        edges: vec![],
    };
    let p = PlannerParams {
        n_max: 1,
        ..Default::default()
    };
    assert_eq!(select_frontiers(&graph, &p), vec![3]);
}

#[test]
fn close_frontiers_keep_only_the_better_one() {
    let graph = ExplorationGraph {
        foot_z: 0.2,
        vertices: vec![vertex(0.0, 0.0), vertex(3.0, 5.0), vertex(3.5, 4.0)],
        edges: vec![],
    };
    let p = PlannerParams {
        d_m: 1.0,
        ..Default::default()
    };
    assert_eq!(select_frontiers(&graph, &p), vec![1]);
}

/// Support straight from the world's materials, independent of the map.
fn world_supported(world: &GroundTruthWorld, x: f64, y: f64, foot_z: f64) -> bool {
    let r = world.resolution();
    let i = (x / r).floor() as i32;
    let j = (y / r).floor() as i32;
    let mut k = 0;
    while (k as f64) * r < foot_z {
        let (lo, hi) = (k as f64 * r, (k + 1) as f64 * r);
        // the voxel overlaps the band [foot - 0.4, foot - 0.1]
        let overlaps = hi > foot_z - 0.4 && lo <= foot_z - 0.1;
        if overlaps && world.material(&VoxelKey::new(i, j, k)) == Material::Solid {
            return true;
        }
        k += 1;
    }
    false
}

#[test]
fn known_room_graph_spans_the_room_and_every_edge_is_supported() {
    let sc = make_world(ScenarioKind::StartupRoom, 3, 0.2).unwrap();
    let map = fully_known(&sc.world);
    let p = PlannerParams::default();
    let start = sc.start_poses[0];
    let g = build_graph(&map, &start, &p, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    assert!(g.vertices.len() > 40, "only {} vertices", g.vertices.len());
    let (mut lo, mut hi) = ((f64::MAX, f64::MAX), (f64::MIN, f64::MIN));
    for v in &g.vertices {
        lo = (lo.0.min(v.x), lo.1.min(v.y));
        hi = (hi.0.max(v.x), hi.1.max(v.y));
    }
    assert!(hi.0 - lo.0 > 3.0 && hi.1 - lo.1 > 3.0);
    for &(a, b, len) in &g.edges {
        let (va, vb) = (&g.vertices[a], &g.vertices[b]);
        assert!((len - ((va.x - vb.x).powi(2) + (va.y - vb.y).powi(2)).sqrt()).abs() < 1e-12);
        for s in 0..=40 {
            let f = s as f64 / 40.0;
            let (x, y) = (va.x + f * (vb.x - va.x), va.y + f * (vb.y - va.y));
            assert!(world_supported(&sc.world, x, y, g.foot_z), "edge {a}-{b} unsupported at ({x}, {y})");
        }
    }
    // shortest-path tree: parents are strictly closer to the root
    for (i, v) in g.vertices.iter().enumerate().skip(1) {
        let p = v.parent.expect("reachable vertex has a parent");
        assert!(g.vertices[p].distance < v.distance, "vertex {i}");
    }
}

#[test]
fn startup_hole_blocks_planning_until_predictions_fill_it() {
    let sc = make_world(ScenarioKind::StartupRoom, 1, 0.4).unwrap();
    let fusion = FusionParams::default();
    let p = PlannerParams::default();
    let start = sc.start_poses[0];
    let mut map = fusion.new_map(0.4).unwrap();
    let scan = simulate_scan(&sc.world, &start, &ExploreConfig::default().lidar).unwrap();
    insert_scan(&mut map, &scan, &fusion).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    assert_eq!(build_graph(&map, &start, &p, &mut rng).unwrap_err().code(), "no_traversable_start");
    // inpaint the window with a denoiser that knows the truth
    let spec = GridSpec {
        dims: [16, 16, 8],
        resolution: 0.4,
    };
    let sampler = Sampler::new(&ScheduleConfig::default()).unwrap();
    let center = spec.center_for(Pose::new(start.x, start.y, start.z, 0.0));
    let submap = extract_submap(&map, center, spec.dims, spec.resolution).unwrap();
    let truth = sc.world.local_grid(&submap.grid).unwrap();
    let oracle = OracleDenoiser::new(&truth, sampler.schedule.clone());
    for s in sample_batch(&oracle, &submap, &sampler, &[1, 2, 3]).unwrap() {
        fuse_prediction(&mut map, &s, &submap, &fusion).unwrap();
    }
    let g = build_graph(&map, &start, &p, &mut rng).unwrap();
    let best = g.best_vertex().expect("a vertex besides the root");
    let path = g.path_points(best).unwrap();
    assert!(path.len() >= 2);
    for w in path.windows(2) {
        for s in 0..=20 {
            let f = s as f64 / 20.0;
            let (x, y) = (w[0].0 + f * (w[1].0 - w[0].0), w[0].1 + f * (w[1].1 - w[0].1));
            assert!(world_supported(&sc.world, x, y, start.z));
        }
    }
}

#[test]
fn explore_runs_are_deterministic() {
    let sc = make_world(ScenarioKind::CorridorCorner, 4, 0.4).unwrap();
    let run = || {
        let mut ex = Explorer::new(&sc, Mode::Baseline, ExploreConfig::default(), None, 9).unwrap();
        let s = ex.run().unwrap();
        (s, ex.trace().to_vec(), ex.map().clone())
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, b.2);
}

#[test]
fn prediction_modes_need_a_denoiser() {
    let sc = make_world(ScenarioKind::CorridorCorner, 0, 0.4).unwrap();
    assert!(Explorer::new(&sc, Mode::RcProbabilistic, ExploreConfig::default(), None, 0).is_err());
    assert_eq!("ss-fc-pmm".parse::<Mode>().unwrap(), Mode::FcProbabilistic);
    assert!("SS-XX".parse::<Mode>().is_err());
}

#[test]
fn oracle_route_is_walkable_and_resampled_evenly() {
    let sc = make_world(ScenarioKind::SquareLoop, 2, 0.4).unwrap();
    let p = PlannerParams::default();
    let z = sc.start_poses[0].z;
    let route = oracle_tour(&sc.world, &sc.tour, z, &p).unwrap();
    assert!(route.len() > 20);
    for (x, y) in &route {
        assert!(world_supported(&sc.world, *x, *y, z));
    }
    let stops = resample_polyline(&route, 1.0);
    for w in stops.windows(2) {
        let d = ((w[1].0 - w[0].0).powi(2) + (w[1].1 - w[0].1).powi(2)).sqrt();
        assert!(d <= 1.0 + 1e-9);
    }
    assert_eq!(stops.last(), route.last());
}

#[test]
fn drop_zone_crossing_is_detected() {
    let sc = make_world(ScenarioKind::GlassRailing, 0, 0.4).unwrap();
    assert!(!path_crosses_drop_zone(&sc, &[(2.0, 2.0), (10.0, 2.0)]));
    assert!(path_crosses_drop_zone(&sc, &[(2.0, 2.0), (6.0, 6.0)]));
}
