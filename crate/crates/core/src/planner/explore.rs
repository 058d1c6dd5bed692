use std::fmt;
use std::str::FromStr;

use petgraph::algo::astar;
use petgraph::graph::{NodeIndex, UnGraph};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{build_graph, select_frontiers, ExplorationGraph};
use super::{body_clear, segment_samples, supported, PlannerParams};
use crate::diffusion::{derive_seed, sample_batch, Denoiser, Sampler};
use crate::grid::{extract_submap, GlobalOccupancyMap, GridSpec, LocalGrid, MaskedSubmap, Point, Pose, VoxelKey};
use crate::mapping::{
    clear_window_predictions, coverage, fuse_prediction, insert_scan, insert_scan_overwriting, merge_one_shot,
    FusionParams,
};
use crate::sensor::{simulate_scan, GroundTruthWorld, LidarConfig, Scenario};
use crate::{Error, Result};

/// Baseline or one of the four prediction configurations: robot-centric vs
/// frontier-centric windows, one-shot vs probabilistic merging.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "BL")]
    Baseline,
    #[serde(rename = "SS-RC-OSMM")]
    RcOneShot,
    #[serde(rename = "SS-RC-PMM")]
    RcProbabilistic,
    #[serde(rename = "SS-FC-OSMM")]
    FcOneShot,
    #[serde(rename = "SS-FC-PMM")]
    FcProbabilistic,
}

impl Mode {
    pub const ALL: [Mode; 5] = [
        Mode::Baseline,
        Mode::RcOneShot,
        Mode::RcProbabilistic,
        Mode::FcOneShot,
        Mode::FcProbabilistic,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Baseline => "BL",
            Mode::RcOneShot => "SS-RC-OSMM",
            Mode::RcProbabilistic => "SS-RC-PMM",
            Mode::FcOneShot => "SS-FC-OSMM",
            Mode::FcProbabilistic => "SS-FC-PMM",
        }
    }

    pub fn predicts(&self) -> bool {
        *self != Mode::Baseline
    }

    pub fn frontier_centric(&self) -> bool {
        matches!(self, Mode::FcOneShot | Mode::FcProbabilistic)
    }

    pub fn one_shot(&self) -> bool {
        matches!(self, Mode::RcOneShot | Mode::FcOneShot)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown mode '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    /// No vertex promised more than the gain threshold.
    Exhausted,
    Timeout,
    Stuck,
    /// Never produced a plan from the start pose.
    NoInitialPlan,
    /// The robot stepped onto a column without floor.
    Unsafe,
}

impl Outcome {
    pub fn is_failure(&self) -> bool {
        matches!(self, Outcome::Stuck | Outcome::NoInitialPlan | Outcome::Unsafe)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Outcome::Completed => "completed",
            Outcome::Exhausted => "exhausted",
            Outcome::Timeout => "timeout",
            Outcome::Stuck => "stuck",
            Outcome::NoInitialPlan => "no_initial_plan",
            Outcome::Unsafe => "unsafe",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExploreConfig {
    pub lidar: LidarConfig,
    pub fusion: FusionParams,
    pub planner: PlannerParams,
    pub max_ticks: usize,
    pub coverage_target: f64,
    /// Distance to the scenario goal that counts as arrival (m).
    pub goal_radius: f64,
    /// Run fails when coverage improves by less than `min_progress` over
    /// this many ticks.
    pub stuck_ticks: usize,
    pub min_progress: f64,
    /// Ticks allowed to find a first plan before the start counts as failed.
    pub start_patience: usize,
    /// Distance a scripted operator may drive the robot along the reference
    /// route while no plan exists yet (m). Zero disables it.
    pub teleop_distance: f64,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        Self {
            lidar: LidarConfig::default(),
            fusion: FusionParams::default(),
            planner: PlannerParams::default(),
            max_ticks: 150,
            coverage_target: 0.95,
            goal_radius: 1.0,
            stuck_ticks: 12,
            min_progress: 0.005,
            start_patience: 5,
            teleop_distance: 2.0,
        }
    }
}

impl ExploreConfig {
    pub fn validate(&self) -> Result<()> {
        self.lidar.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.fusion.validate()?;
        self.planner.validate()?;
        if !(self.coverage_target > 0.0 && self.coverage_target <= 1.0) {
            return Err(Error::Config("coverage_target must lie in (0, 1]".into()));
        }
        if !(self.teleop_distance >= 0.0) {
            return Err(Error::Config("teleop_distance must be non-negative".into()));
        }
        if self.max_ticks == 0 || self.stuck_ticks == 0 || self.start_patience == 0 {
            return Err(Error::Config("tick limits must be positive".into()));
        }
        Ok(())
    }
}

/// Learned model plus sampling settings for prediction modes.
#[derive(Clone, Copy)]
pub struct PredictionSetup<'a> {
    pub denoiser: &'a dyn Denoiser,
    pub sampler: &'a Sampler,
    pub spec: GridSpec,
    /// Samples per window.
    pub k: usize,
    /// Predict on every n-th tick.
    pub every: usize,
}

/// Samples `k` completions of the window a robot standing at `(x, y, foot_z)`
/// would see, conditioned on `sensed`. Windows are axis-aligned.
pub fn predict_window(
    setup: &PredictionSetup<'_>,
    sensed: &GlobalOccupancyMap,
    at: (f64, f64),
    foot_z: f64,
    seed: u64,
) -> Result<(MaskedSubmap, Vec<LocalGrid>)> {
    let center = setup.spec.center_for(Pose::new(at.0, at.1, foot_z, 0.0));
    let submap = extract_submap(sensed, center, setup.spec.dims, setup.spec.resolution)?;
    let seeds: Vec<u64> = (0..setup.k as u64).map(|s| derive_seed(seed, &[s])).collect();
    let samples = sample_batch(setup.denoiser, &submap, setup.sampler, &seeds)?;
    Ok((submap, samples))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TickRecord {
    pub tick: usize,
    pub pose: Pose,
    pub coverage: f64,
    pub max_gain: f64,
    pub mode: Mode,
    pub predictions_fused: usize,
    pub path_length: f64,
    /// Planned path for this tick, empty when no plan was found.
    pub path: Vec<(f64, f64)>,
    pub crosses_drop_zone: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub seed: u64,
    pub mode: Mode,
    pub outcome: Outcome,
    pub ticks: usize,
    pub coverage: f64,
    /// First tick at which coverage reached the target, if it did.
    pub ticks_to_target: Option<usize>,
    pub first_plan_tick: Option<usize>,
    /// Ticks the scripted operator drove before the planner took over.
    pub teleop_ticks: usize,
    pub distance_travelled: f64,
    pub drop_zone_crossings: usize,
}

/// Any planned sample point lying over a floorless column.
pub fn path_crosses_drop_zone(scenario: &Scenario, path: &[(f64, f64)]) -> bool {
    let r = scenario.world.resolution();
    path.windows(2).any(|w| {
        segment_samples(w[0], w[1], r).into_iter().any(|(x, y)| {
            let k = VoxelKey::from_point(&Point::new(x, y, 0.0), r);
            scenario.is_drop_column(k.i, k.j)
        })
    })
}

/// One exploration run: a robot, its sensor-only map, the map the planner
/// sees (with predictions) and the trace so far.
pub struct Explorer<'a> {
    scenario: &'a Scenario,
    mode: Mode,
    cfg: ExploreConfig,
    predictor: Option<PredictionSetup<'a>>,
    seed: u64,
    pose: Pose,
    sensed: GlobalOccupancyMap,
    map: GlobalOccupancyMap,
    tick: usize,
    graph: Option<ExplorationGraph>,
    first_plan_tick: Option<usize>,
    teleop_route: Option<Vec<(f64, f64)>>,
    teleop_cursor: usize,
    teleop_left: f64,
    teleop_ticks: usize,
    ticks_to_target: Option<usize>,
    progress_mark: (usize, f64),
    travelled: f64,
    trace: Vec<TickRecord>,
    outcome: Option<Outcome>,
}

impl<'a> Explorer<'a> {
    pub fn new(
        scenario: &'a Scenario,
        mode: Mode,
        cfg: ExploreConfig,
        predictor: Option<PredictionSetup<'a>>,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        if mode.predicts() {
            let p = predictor
                .as_ref()
                .ok_or_else(|| Error::Config(format!("mode {mode} needs a denoiser")))?;
            if p.k == 0 || p.every == 0 {
                return Err(Error::Config("k_predictions and predict_every must be positive".into()));
            }
            if (p.spec.resolution - scenario.world.resolution()).abs() > 1e-12 {
                return Err(Error::ResolutionMismatch {
                    map: scenario.world.resolution(),
                    input: p.spec.resolution,
                });
            }
        }
        let pose = *scenario
            .start_poses
            .first()
            .ok_or_else(|| Error::InvalidArgument("scenario has no start pose".into()))?;
        let r = scenario.world.resolution();
        Ok(Self {
            scenario,
            mode,
            predictor: if mode.predicts() { predictor } else { None },
            seed,
            pose,
            sensed: cfg.fusion.new_map(r)?,
            map: cfg.fusion.new_map(r)?,
            tick: 0,
            graph: None,
            first_plan_tick: None,
            teleop_route: None,
            teleop_cursor: 0,
            teleop_left: cfg.teleop_distance,
            teleop_ticks: 0,
            ticks_to_target: None,
            progress_mark: (0, 0.0),
            travelled: 0.0,
            trace: Vec::new(),
            outcome: None,
            cfg,
        })
    }

    pub fn pose(&self) -> Pose {
        self.pose
    }

    pub fn map(&self) -> &GlobalOccupancyMap {
        &self.map
    }

    pub fn sensed_map(&self) -> &GlobalOccupancyMap {
        &self.sensed
    }

    pub fn graph(&self) -> Option<&ExplorationGraph> {
        self.graph.as_ref()
    }

    pub fn trace(&self) -> &[TickRecord] {
        &self.trace
    }

    pub fn outcome(&self) -> Option<Outcome> {
        self.outcome
    }

    fn predict(&mut self, setup: PredictionSetup<'a>) -> Result<usize> {
        let foot_z = self.pose.z;
        let mut centers = vec![(self.pose.x, self.pose.y)];
        if self.mode.frontier_centric() {
            // before the first graph exists there are no frontiers: predict at the robot
            if let Some(g) = &self.graph {
                let f = select_frontiers(g, &self.cfg.planner);
                if !f.is_empty() {
                    centers = f.iter().map(|i| (g.vertices[*i].x, g.vertices[*i].y)).collect();
                }
            }
        }
        let mut fused = 0;
        for (w, at) in centers.into_iter().enumerate() {
            let seed = derive_seed(self.seed, &[self.tick as u64, w as u64]);
            let (submap, samples) = predict_window(&setup, &self.sensed, at, foot_z, seed)?;
            if self.mode.one_shot() {
                clear_window_predictions(&mut self.map, &submap.grid);
                merge_one_shot(&mut self.map, &samples[0], &submap, &self.cfg.fusion)?;
                fused += 1;
            } else {
                for s in &samples {
                    fuse_prediction(&mut self.map, s, &submap, &self.cfg.fusion)?;
                    fused += 1;
                }
            }
        }
        Ok(fused)
    }

    /// Walks up to `step_length` along the path. Stops short of anything
    /// the body would touch in the real world; stepping onto a floorless
    /// column ends the run.
    fn advance(&mut self, path: &[(f64, f64)]) -> Result<bool> {
        let world = &self.scenario.world;
        let p = &self.cfg.planner;
        let z = self.pose.z;
        let mut budget = p.step_length;
        let mut cur = (self.pose.x, self.pose.y);
        let mut heading = self.pose.yaw;
        'walk: for w in path.windows(2) {
            let samples = segment_samples(w[0], w[1], world.resolution());
            for s in samples.into_iter().skip(1) {
                let d = ((s.0 - cur.0).powi(2) + (s.1 - cur.1).powi(2)).sqrt();
                if d > budget {
                    break 'walk;
                }
                if !body_clear(world, s.0, s.1, z, p) {
                    break 'walk;
                }
                if d > 0.0 {
                    heading = (s.1 - cur.1).atan2(s.0 - cur.0);
                }
                budget -= d;
                self.travelled += d;
                cur = s;
                if !supported(world, s.0, s.1, z, p) {
                    self.pose = Pose::new(cur.0, cur.1, z, heading);
                    return Ok(false);
                }
            }
        }
        self.pose = Pose::new(cur.0, cur.1, z, heading);
        Ok(true)
    }

    /// Scripted operator: drives one step along the reference route.
    fn teleop(&mut self) -> Result<()> {
        if self.teleop_route.is_none() {
            let world = &self.scenario.world;
            let route = oracle_tour(world, &self.scenario.tour, self.pose.z, &self.cfg.planner)?;
            self.teleop_route = Some(resample_polyline(&route, 0.5 * world.resolution()));
        }
        let route = self.teleop_route.as_deref().unwrap_or_default();
        let step = self.cfg.planner.step_length.min(self.teleop_left);
        let mut walked = 0.0;
        let mut cur = (self.pose.x, self.pose.y);
        let mut heading = self.pose.yaw;
        while self.teleop_cursor + 1 < route.len() {
            let next = route[self.teleop_cursor + 1];
            let d = dist2(cur, next).sqrt();
            if walked + d > step {
                break;
            }
            if d > 0.0 {
                heading = (next.1 - cur.1).atan2(next.0 - cur.0);
            }
            walked += d;
            cur = next;
            self.teleop_cursor += 1;
        }
        if walked == 0.0 {
            // route exhausted
            self.teleop_left = 0.0;
        }
        self.teleop_left -= walked;
        self.travelled += walked;
        self.teleop_ticks += 1;
        self.pose = Pose::new(cur.0, cur.1, self.pose.z, heading);
        Ok(())
    }

    /// One tick: sense, predict, plan, move. Returns the outcome once the run
    /// has ended; further calls are no-ops.
    pub fn step(&mut self) -> Result<Option<Outcome>> {
        if self.outcome.is_some() {
            return Ok(self.outcome);
        }
        let scenario = self.scenario;
        let scan = simulate_scan(&scenario.world, &self.pose, &self.cfg.lidar)?;
        insert_scan(&mut self.sensed, &scan, &self.cfg.fusion)?;
        if self.mode.one_shot() {
            insert_scan_overwriting(&mut self.map, &scan, &self.cfg.fusion)?;
        } else {
            insert_scan(&mut self.map, &scan, &self.cfg.fusion)?;
        }
        let mut fused = 0;
        if let Some(setup) = self.predictor {
            if self.tick % setup.every == 0 {
                fused = self.predict(setup)?;
            }
        }
        let cov = coverage(&self.sensed, &scenario.target)?;
        if cov >= self.cfg.coverage_target && self.ticks_to_target.is_none() {
            self.ticks_to_target = Some(self.tick);
        }
        if cov >= self.progress_mark.1 + self.cfg.min_progress {
            self.progress_mark = (self.tick, cov);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[self.tick as u64, u64::MAX]));
        let graph = match build_graph(&self.map, &self.pose, &self.cfg.planner, &mut rng) {
            Ok(g) => Some(g),
            Err(Error::NoTraversableStart(_)) => None,
            Err(e) => return Err(e),
        };
        let mut record = TickRecord {
            tick: self.tick,
            pose: self.pose,
            coverage: cov,
            max_gain: graph.as_ref().map_or(0.0, |g| g.max_gain()),
            mode: self.mode,
            predictions_fused: fused,
            path_length: 0.0,
            path: Vec::new(),
            crosses_drop_zone: false,
        };
        let arrived = scenario.goal.is_some_and(|(gx, gy)| {
            ((self.pose.x - gx).powi(2) + (self.pose.y - gy).powi(2)).sqrt() <= self.cfg.goal_radius
        });
        let mut outcome = None;
        if cov >= self.cfg.coverage_target || arrived {
            outcome = Some(Outcome::Completed);
        } else if let Some(g) = &graph {
            let target = match g.best_vertex() {
                Some(best) if g.max_gain() >= self.cfg.planner.gain_epsilon => Some(Some(best)),
                // nothing left to see nearby: traversal runs keep heading for the goal
                Some(_) => scenario.goal.and_then(|goal| toward_goal(g, goal)).map(Some),
                None => Some(None),
            };
            match target {
                Some(Some(best)) => {
                    let path = g.path_points(best)?;
                    self.first_plan_tick.get_or_insert(self.tick);
                    record.path_length = g.vertices[best].distance;
                    record.crosses_drop_zone = path_crosses_drop_zone(scenario, &path);
                    record.path = path;
                    if !self.advance(&record.path)? {
                        outcome = Some(Outcome::Unsafe);
                    }
                }
                // a lone root: boxed in by unknown ground, no plan this tick
                Some(None) => {}
                None => outcome = Some(Outcome::Exhausted),
            }
        }
        if outcome.is_none() && self.first_plan_tick.is_none() && self.teleop_left > 0.0 {
            self.teleop()?;
        } else if outcome.is_none() {
            if self.first_plan_tick.is_none() && self.tick + 1 >= self.cfg.start_patience + self.teleop_ticks {
                outcome = Some(Outcome::NoInitialPlan);
            } else if self.tick >= self.progress_mark.0 + self.cfg.stuck_ticks {
                outcome = Some(Outcome::Stuck);
            } else if self.tick + 1 >= self.cfg.max_ticks {
                outcome = Some(Outcome::Timeout);
            }
        }
        if let Some(o) = outcome {
            log::debug!("{} {} seed {}: {} at tick {}", scenario.kind, self.mode, self.seed, o.as_str(), self.tick);
        }
        self.graph = graph;
        self.trace.push(record);
        self.tick += 1;
        self.outcome = outcome;
        Ok(outcome)
    }

    pub fn run(&mut self) -> Result<RunSummary> {
        while self.step()?.is_none() {}
        Ok(self.summary())
    }

    pub fn summary(&self) -> RunSummary {
        RunSummary {
            scenario: self.scenario.kind.as_str().to_string(),
            seed: self.seed,
            mode: self.mode,
            outcome: self.outcome.unwrap_or(Outcome::Timeout),
            ticks: self.tick,
            coverage: self.trace.last().map_or(0.0, |r| r.coverage),
            ticks_to_target: self.ticks_to_target,
            first_plan_tick: self.first_plan_tick,
            teleop_ticks: self.teleop_ticks,
            distance_travelled: self.travelled,
            drop_zone_crossings: self.trace.iter().filter(|r| r.crosses_drop_zone).count(),
        }
    }
}

/// Vertex closest to `goal`, if it gets the robot at least a quarter metre
/// nearer than the root is.
fn toward_goal(graph: &ExplorationGraph, goal: (f64, f64)) -> Option<usize> {
    let d = |v: &super::Vertex| dist2((v.x, v.y), goal).sqrt();
    let here = d(graph.root());
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in graph.vertices.iter().enumerate().skip(1) {
        let dv = d(v);
        if best.is_none_or(|(_, b)| dv < b) {
            best = Some((i, dv));
        }
    }
    best.filter(|(_, b)| *b <= here - 0.25).map(|(i, _)| i)
}

/// Shortest collision-free, supported route through the tour waypoints on
/// the ground-truth world, as a polyline of column centers. This is the
/// scripted reference agent.
pub fn oracle_tour(
    world: &GroundTruthWorld,
    tour: &[(f64, f64)],
    foot_z: f64,
    params: &PlannerParams,
) -> Result<Vec<(f64, f64)>> {
    let [nx, ny, _] = world.dims();
    let r = world.resolution();
    let center = |i: usize, j: usize| ((i as f64 + 0.5) * r, (j as f64 + 0.5) * r);
    let mut g = UnGraph::<(usize, usize), f64>::default();
    let mut ids = vec![None; nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            let (x, y) = center(i, j);
            if supported(world, x, y, foot_z, params) && body_clear(world, x, y, foot_z, params) {
                ids[i + nx * j] = Some(g.add_node((i, j)));
            }
        }
    }
    for j in 0..ny {
        for i in 0..nx {
            let Some(a) = ids[i + nx * j] else { continue };
            for (di, dj) in [(1i64, 0i64), (0, 1), (1, 1), (1, -1)] {
                let (ni, nj) = (i as i64 + di, j as i64 + dj);
                if ni < 0 || nj < 0 || ni >= nx as i64 || nj >= ny as i64 {
                    continue;
                }
                if let Some(b) = ids[ni as usize + nx * nj as usize] {
                    g.add_edge(a, b, r * ((di * di + dj * dj) as f64).sqrt());
                }
            }
        }
    }
    let snap = |p: (f64, f64)| -> Result<NodeIndex> {
        g.node_indices()
            .min_by(|a, b| {
                let da = dist2(center(g[*a].0, g[*a].1), p);
                let db = dist2(center(g[*b].0, g[*b].1), p);
                da.total_cmp(&db).then(a.cmp(b))
            })
            .ok_or_else(|| Error::InvalidArgument("world has no traversable column".into()))
    };
    let mut out: Vec<(f64, f64)> = Vec::new();
    for w in tour.windows(2) {
        let (a, b) = (snap(w[0])?, snap(w[1])?);
        let goal = center(g[b].0, g[b].1);
        let (_, nodes) = astar(
            &g,
            a,
            |n| n == b,
            |e| *e.weight(),
            |n| dist2(center(g[n].0, g[n].1), goal).sqrt(),
        )
        .ok_or(Error::Unreachable(b.index()))?;
        for n in nodes {
            let c = center(g[n].0, g[n].1);
            if out.last() != Some(&c) {
                out.push(c);
            }
        }
    }
    Ok(out)
}

fn dist2(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)
}

/// Points every `step` metres along a polyline, both ends included.
pub fn resample_polyline(path: &[(f64, f64)], step: f64) -> Vec<(f64, f64)> {
    let Some(&first) = path.first() else {
        return Vec::new();
    };
    let mut out = vec![first];
    let mut carry = 0.0;
    for w in path.windows(2) {
        let len = dist2(w[0], w[1]).sqrt();
        let mut s = step - carry;
        while s <= len {
            let f = s / len;
            out.push((w[0].0 + f * (w[1].0 - w[0].0), w[0].1 + f * (w[1].1 - w[0].1)));
            s += step;
        }
        carry = len - (s - step);
    }
    let last = *path.last().unwrap();
    if out.last() != Some(&last) {
        out.push(last);
    }
    out
}
