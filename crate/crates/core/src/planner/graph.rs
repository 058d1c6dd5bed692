use std::collections::BTreeSet;

use petgraph::algo::dijkstra;
use petgraph::graph::{NodeIndex, UnGraph};
use rand::Rng;

use super::{body_clear, segment_traversable, supported, PlannerParams};
use crate::grid::{GlobalOccupancyMap, Pose, VoxelState};
use crate::sensor::VoxelTraversal;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Vertex {
    pub x: f64,
    pub y: f64,
    pub volumetric_gain: f64,
    pub exploration_gain: f64,
    /// Shortest-path length from the root.
    pub distance: f64,
    /// Predecessor on the shortest path; `None` for the root.
    pub parent: Option<usize>,
}

/// Sampled roadmap around the robot. Vertex 0 is the root and every vertex
/// is reachable from it.
#[derive(Clone, Debug, PartialEq)]
pub struct ExplorationGraph {
    pub foot_z: f64,
    pub vertices: Vec<Vertex>,
    /// `(i, j, length)` with `i < j`.
    pub edges: Vec<(usize, usize, f64)>,
}

impl ExplorationGraph {
    pub fn root(&self) -> &Vertex {
        &self.vertices[0]
    }

    /// Vertex ids from the root to `v`, inclusive.
    pub fn path_to(&self, v: usize) -> Result<Vec<usize>> {
        if v >= self.vertices.len() {
            return Err(Error::Unreachable(v));
        }
        let mut path = vec![v];
        let mut cur = v;
        while let Some(p) = self.vertices[cur].parent {
            path.push(p);
            cur = p;
        }
        path.reverse();
        Ok(path)
    }

    pub fn path_points(&self, v: usize) -> Result<Vec<(f64, f64)>> {
        Ok(self
            .path_to(v)?
            .into_iter()
            .map(|i| (self.vertices[i].x, self.vertices[i].y))
            .collect())
    }

    /// Highest exploration gain among non-root vertices, lowest id on ties.
    pub fn best_vertex(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for i in 1..self.vertices.len() {
            match best {
                Some(b) if self.vertices[b].exploration_gain >= self.vertices[i].exploration_gain => {}
                _ => best = Some(i),
            }
        }
        best
    }

    pub fn max_gain(&self) -> f64 {
        self.best_vertex().map_or(0.0, |b| self.vertices[b].exploration_gain)
    }
}

/// Unknown voxels seen from a robot standing at `(x, y, foot_z)`: the gain
/// ray pattern is cast through the map and every distinct unknown voxel
/// before the first occupied one counts. Predicted cells are known.
pub fn volumetric_gain(map: &GlobalOccupancyMap, x: f64, y: f64, foot_z: f64, params: &PlannerParams) -> usize {
    let lidar = &params.gain_lidar;
    let origin = lidar.sensor_origin(&Pose::new(x, y, foot_z, 0.0));
    let r = map.resolution();
    // only the slab from the floor layer up to gain_height above the foot counts
    let k_lo = ((foot_z - r) / r).floor() as i32;
    let k_hi = ((foot_z + params.gain_height) / r).floor() as i32;
    let mut seen = BTreeSet::new();
    for dir in lidar.ray_directions(0.0) {
        for (key, _) in VoxelTraversal::new(&origin, &dir, lidar.max_range, r) {
            match map.state(&key) {
                VoxelState::Occupied => break,
                VoxelState::Free => {}
                VoxelState::Unknown => {
                    if (k_lo..=k_hi).contains(&key.k) {
                        seen.insert(key);
                    }
                }
            }
        }
    }
    seen.len()
}

/// `e^{−γ_S·S} · Σ_j VG_j · e^{−γ_D·D_j}` for one path, where `D_j` is the
/// cumulative distance from the root to the j-th path vertex and `S` the
/// path length.
pub fn exploration_gain_along(gains: &[f64], cumulative: &[f64], params: &PlannerParams) -> f64 {
    debug_assert_eq!(gains.len(), cumulative.len());
    let s = cumulative.last().copied().unwrap_or(0.0);
    let sum: f64 = gains
        .iter()
        .zip(cumulative)
        .map(|(g, d)| g * (-params.gamma_d * d).exp())
        .sum();
    (-params.gamma_s * s).exp() * sum
}

const MAX_TRIES_PER_SAMPLE: usize = 20;

/// Samples a roadmap around `robot`, keeps the component reachable from the
/// robot and scores every vertex.
pub fn build_graph<R: Rng>(
    map: &GlobalOccupancyMap,
    robot: &Pose,
    params: &PlannerParams,
    rng: &mut R,
) -> Result<ExplorationGraph> {
    let foot_z = robot.z;
    if !(supported(map, robot.x, robot.y, foot_z, params) && body_clear(map, robot.x, robot.y, foot_z, params)) {
        return Err(Error::NoTraversableStart(format!("robot at {robot} lacks support or clearance")));
    }
    let mut pts = vec![(robot.x, robot.y)];
    let h = params.sample_half_extent;
    // rejection sampling until sample_count vertices land on traversable ground
    for _ in 0..params.sample_count * MAX_TRIES_PER_SAMPLE {
        if pts.len() > params.sample_count {
            break;
        }
        let x = robot.x + rng.random_range(-h..h);
        let y = robot.y + rng.random_range(-h..h);
        if supported(map, x, y, foot_z, params) && body_clear(map, x, y, foot_z, params) {
            pts.push((x, y));
        }
    }
    let mut g = UnGraph::<(), f64>::with_capacity(pts.len(), 0);
    let nodes: Vec<NodeIndex> = pts.iter().map(|_| g.add_node(())).collect();
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            let d = planar(pts[i], pts[j]);
            if d <= params.connect_radius && d > 0.0 && segment_traversable(map, pts[i], pts[j], foot_z, params) {
                g.add_edge(nodes[i], nodes[j], d);
            }
        }
    }
    let dist = dijkstra(&g, nodes[0], None, |e| *e.weight());
    // keep reachable vertices in their original order
    let keep: Vec<usize> = (0..pts.len()).filter(|i| dist.contains_key(&nodes[*i])).collect();
    let mut remap = vec![usize::MAX; pts.len()];
    for (new, old) in keep.iter().enumerate() {
        remap[*old] = new;
    }
    let mut edges = Vec::new();
    for e in g.raw_edges() {
        let (a, b) = (e.source().index(), e.target().index());
        if remap[a] != usize::MAX && remap[b] != usize::MAX {
            edges.push((remap[a].min(remap[b]), remap[a].max(remap[b]), e.weight));
        }
    }
    edges.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    let distance: Vec<f64> = keep.iter().map(|o| dist[&nodes[*o]]).collect();
    let mut parent = vec![None; keep.len()];
    for &(a, b, w) in &edges {
        // exact: dijkstra produced dist[v] as dist[u] + w
        for (u, v) in [(a, b), (b, a)] {
            if v != 0 && distance[u] + w == distance[v] && parent[v].is_none_or(|p: usize| u < p) {
                parent[v] = Some(u);
            }
        }
    }
    let vertices: Vec<Vertex> = keep
        .iter()
        .enumerate()
        .map(|(new, old)| Vertex {
            x: pts[*old].0,
            y: pts[*old].1,
            volumetric_gain: volumetric_gain(map, pts[*old].0, pts[*old].1, foot_z, params) as f64,
            exploration_gain: 0.0,
            distance: distance[new],
            parent: parent[new],
        })
        .collect();
    let mut graph = ExplorationGraph {
        foot_z,
        vertices,
        edges,
    };
    score(&mut graph, params)?;
    Ok(graph)
}

/// Recomputes every exploration gain from the stored volumetric gains and
/// shortest-path tree.
pub(crate) fn score(graph: &mut ExplorationGraph, params: &PlannerParams) -> Result<()> {
    for v in 0..graph.vertices.len() {
        let path = graph.path_to(v)?;
        let gains: Vec<f64> = path.iter().map(|i| graph.vertices[*i].volumetric_gain).collect();
        let cumulative: Vec<f64> = path.iter().map(|i| graph.vertices[*i].distance).collect();
        graph.vertices[v].exploration_gain = exploration_gain_along(&gains, &cumulative, params);
    }
    Ok(())
}

fn planar(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Prediction targets: non-root vertices within `fc_range` of the root,
/// ranked by exploration gain (then id), accepted greedily while at least
/// `d_m` from every accepted vertex, at most `n_max`.
pub fn select_frontiers(graph: &ExplorationGraph, params: &PlannerParams) -> Vec<usize> {
    let root = graph.root();
    let mut cands: Vec<usize> = (1..graph.vertices.len())
        .filter(|i| planar((root.x, root.y), (graph.vertices[*i].x, graph.vertices[*i].y)) <= params.fc_range)
        .collect();
    cands.sort_by(|a, b| {
        graph.vertices[*b]
            .exploration_gain
            .total_cmp(&graph.vertices[*a].exploration_gain)
            .then(a.cmp(b))
    });
    let mut out: Vec<usize> = Vec::new();
    for c in cands {
        if out.len() == params.n_max {
            break;
        }
        let p = (graph.vertices[c].x, graph.vertices[c].y);
        if out
            .iter()
            .all(|o| planar(p, (graph.vertices[*o].x, graph.vertices[*o].y)) >= params.d_m)
        {
            out.push(c);
        }
    }
    out
}
