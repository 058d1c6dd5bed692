//! Experiment plumbing behind the CLI: configuration, training, exploration
//! runs, the evaluation grid and report files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::denoiser::{build_corpus, train, write_loss_csv, CorpusConfig, DenoiserModel, TrainConfig};
use crate::diffusion::{derive_seed, ScheduleConfig, Sampler};
use crate::grid::io::{save_grid, save_map, write_atomic};
use crate::grid::{extract_submap, GlobalOccupancyMap, GridSpec, LocalGrid, Pose};
use crate::mapping::{clear_window_predictions, fuse_prediction, insert_scan, insert_scan_overwriting, merge_one_shot};
use crate::metrics::{evaluate_run, pairwise_ious, FeatureEmbedder, RunMetrics};
use crate::planner::{
    build_graph, oracle_tour, predict_window, resample_polyline, select_frontiers, ExploreConfig, Explorer, Mode,
    PredictionSetup, RunSummary, TickRecord,
};
use crate::sensor::{make_world, simulate_scan, Scenario, ScenarioKind};
use crate::{Error, Result};

/// Settings for the oracle-agent evaluation protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Predict and evaluate on every K-th tick of the reference route.
    pub interval: usize,
    pub embedder_seed: u64,
    /// Prediction values at or above this are occupied when comparing samples.
    pub iou_threshold: f32,
    pub seeds: Vec<u64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            interval: 2,
            embedder_seed: 7,
            iou_threshold: 0.5,
            seeds: vec![0, 1, 2],
        }
    }
}

/// Everything one command needs. Every field has a default so a config file
/// only lists what it changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub scenario: ScenarioKind,
    pub seed: u64,
    /// Explore runs use seeds `seed .. seed + runs`.
    pub runs: usize,
    pub mode: Mode,
    pub grid: GridSpec,
    pub explore: ExploreConfig,
    pub schedule: ScheduleConfig,
    pub train: TrainConfig,
    pub corpus: CorpusConfig,
    /// Relative paths resolve against `out_dir`.
    pub checkpoint: PathBuf,
    pub k_predictions: usize,
    pub predict_every: usize,
    pub evaluation: EvalConfig,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioKind::CorridorCorner,
            seed: 0,
            runs: 1,
            mode: Mode::RcProbabilistic,
            grid: GridSpec::default(),
            explore: ExploreConfig::default(),
            schedule: ScheduleConfig::default(),
            train: TrainConfig::default(),
            corpus: CorpusConfig::default(),
            checkpoint: PathBuf::from("model.occm"),
            k_predictions: 3,
            predict_every: 1,
            evaluation: EvalConfig::default(),
            out_dir: PathBuf::from("runs"),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.explore.validate()?;
        if !(3..=5).contains(&self.k_predictions) {
            return Err(Error::Config(format!("k_predictions must lie in 3..=5, got {}", self.k_predictions)));
        }
        if self.runs == 0 || self.predict_every == 0 || self.evaluation.interval == 0 {
            return Err(Error::Config("runs, predict_every and evaluation.interval must be positive".into()));
        }
        if self.grid.dims.iter().any(|d| *d == 0 || d % 4 != 0) {
            return Err(Error::Config(format!("grid dims {:?} must be positive multiples of 4", self.grid.dims)));
        }
        self.schedule.noise().map_err(|e| Error::Config(e.to_string()))?;
        self.schedule.inference().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        if self.checkpoint.is_absolute() {
            self.checkpoint.clone()
        } else {
            self.out_dir.join(&self.checkpoint)
        }
    }

    pub fn scenario(&self, seed: u64) -> Result<Scenario> {
        make_world(self.scenario, seed, self.grid.resolution)
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub corpus_size: usize,
    pub steps: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub checkpoint: PathBuf,
}

/// Builds the corpus, trains, and writes the checkpoint plus `loss.csv`.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainReport> {
    cfg.validate()?;
    create_dir(&cfg.out_dir)?;
    let worlds = cfg.corpus.worlds(cfg.grid.resolution)?;
    let corpus = build_corpus(
        &worlds,
        cfg.corpus.poses_per_world,
        cfg.corpus.augmentations,
        &cfg.grid,
        cfg.corpus.seed,
    )?;
    log::info!("corpus of {} grids", corpus.len());
    let schedule = cfg.schedule.noise()?;
    let trained = train(&corpus, &schedule, &cfg.train)?;
    let path = cfg.checkpoint_path();
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    trained.model.save(&path)?;
    write_loss_csv(&cfg.out_dir.join("loss.csv"), &trained.losses)?;
    let window = trained.losses.len().clamp(1, 50);
    let mean = |r: &[crate::denoiser::LossRecord]| r.iter().map(|l| l.loss).sum::<f64>() / r.len().max(1) as f64;
    let report = TrainReport {
        corpus_size: corpus.len(),
        steps: trained.losses.len(),
        initial_loss: mean(&trained.losses[..window]),
        final_loss: mean(&trained.losses[trained.losses.len() - window..]),
        checkpoint: path,
    };
    write_json(&cfg.out_dir.join("train_summary.json"), &report)?;
    Ok(report)
}

pub fn load_model(cfg: &RunConfig) -> Result<DenoiserModel> {
    DenoiserModel::load(&cfg.checkpoint_path())
}

/// Trace CSV: one row per tick, fixed precision so equal runs give equal bytes.
pub fn trace_csv(trace: &[TickRecord]) -> String {
    let mut s = String::from("tick,x,y,yaw,coverage,max_gain,mode,predictions_fused,path_length\n");
    for r in trace {
        let _ = writeln!(
            s,
            "{},{:.4},{:.4},{:.4},{:.6},{:.6},{},{},{:.4}",
            r.tick, r.pose.x, r.pose.y, r.pose.yaw, r.coverage, r.max_gain, r.mode, r.predictions_fused, r.path_length
        );
    }
    s
}

/// Output of one exploration run.
pub struct RunArtifacts {
    pub summary: RunSummary,
    pub trace: Vec<TickRecord>,
    pub map: GlobalOccupancyMap,
    pub sensed: GlobalOccupancyMap,
}

/// Runs one exploration episode without touching the filesystem.
pub fn explore_once(
    cfg: &RunConfig,
    scenario: &Scenario,
    mode: Mode,
    model: Option<&DenoiserModel>,
    seed: u64,
) -> Result<RunArtifacts> {
    let sampler = Sampler::new(&cfg.schedule)?;
    let setup = model.map(|m| PredictionSetup {
        denoiser: m,
        sampler: &sampler,
        spec: cfg.grid,
        k: cfg.k_predictions,
        every: cfg.predict_every,
    });
    let mut ex = Explorer::new(scenario, mode, cfg.explore.clone(), setup, seed)?;
    let summary = ex.run()?;
    Ok(RunArtifacts {
        summary,
        trace: ex.trace().to_vec(),
        map: ex.map().clone(),
        sensed: ex.sensed_map().clone(),
    })
}

/// Runs `cfg.runs` seeded episodes of `cfg.mode` and writes, under
/// `out_dir/<scenario>/<mode>/`: per-seed trace CSV, map snapshots and
/// summary JSON, plus the aggregate report and coverage curve.
pub fn cmd_explore(cfg: &RunConfig) -> Result<Vec<RunSummary>> {
    cfg.validate()?;
    let model = if cfg.mode.predicts() { Some(load_model(cfg)?) } else { None };
    let dir = cfg.out_dir.join(cfg.scenario.as_str()).join(cfg.mode.as_str());
    create_dir(&dir)?;
    let mut summaries = Vec::new();
    let mut traces = Vec::new();
    let mut oracle_ticks = Vec::new();
    for seed in cfg.seed..cfg.seed + cfg.runs as u64 {
        let scenario = cfg.scenario(seed)?;
        oracle_ticks.push(oracle_ticks_for(&scenario, &cfg.explore)?);
        let run = explore_once(cfg, &scenario, cfg.mode, model.as_ref(), seed)?;
        let run_dir = dir.join(format!("seed_{seed}"));
        create_dir(&run_dir)?;
        write_atomic(&run_dir.join("trace.csv"), trace_csv(&run.trace).as_bytes())?;
        save_map(&run_dir.join("map.occg"), &run.map)?;
        save_map(&run_dir.join("sensed.occg"), &run.sensed)?;
        write_json(&run_dir.join("summary.json"), &run.summary)?;
        log::info!(
            "{} {} seed {seed}: {} after {} ticks, coverage {:.3}",
            cfg.scenario,
            cfg.mode,
            run.summary.outcome.as_str(),
            run.summary.ticks,
            run.summary.coverage
        );
        summaries.push(run.summary);
        traces.push(run.trace);
    }
    let report = ExploreReport {
        scenario: cfg.scenario.as_str().to_string(),
        modes: traversal_table(&summaries),
        oracle_reference: oracle_reference(&oracle_ticks)?,
    };
    write_json(&dir.join("report.json"), &report)?;
    let mut csv = traversal_table_csv(&report.modes);
    let o = &report.oracle_reference;
    let _ = writeln!(csv, "oracle_reference,{},{},{:.2},{:.2},{:.2},{:.2},0", o.runs, o.runs, o.mean, o.min, o.max, o.std);
    write_atomic(&dir.join("report.csv"), csv.as_bytes())?;
    write_atomic(&dir.join("coverage_curve.csv"), coverage_curve_csv(&traces).as_bytes())?;
    Ok(summaries)
}

/// Ticks the scripted agent needs to drive the scenario's reference route on
/// the ground truth at the planner's step length. An upper bound on planner
/// performance, not a human baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReference {
    pub label: String,
    pub runs: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExploreReport {
    pub scenario: String,
    pub modes: Vec<TraversalRow>,
    pub oracle_reference: OracleReference,
}

pub fn oracle_ticks_for(scenario: &Scenario, explore: &ExploreConfig) -> Result<usize> {
    let start = scenario.start_poses[0];
    let route = oracle_tour(&scenario.world, &scenario.tour, start.z, &explore.planner)?;
    Ok(resample_polyline(&route, explore.planner.step_length).len().saturating_sub(1))
}

fn oracle_reference(ticks: &[usize]) -> Result<OracleReference> {
    if ticks.is_empty() {
        return Err(Error::InvalidArgument("no runs for the oracle reference".into()));
    }
    let t: Vec<f64> = ticks.iter().map(|v| *v as f64).collect();
    let n = t.len() as f64;
    let mean = t.iter().sum::<f64>() / n;
    Ok(OracleReference {
        label: "scripted shortest path on ground truth (upper bound)".into(),
        runs: t.len(),
        mean,
        min: t.iter().copied().fold(f64::INFINITY, f64::min),
        max: t.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        std: (t.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt(),
    })
}

/// Completion-time statistics for one mode, in ticks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraversalRow {
    pub mode: Mode,
    pub runs: usize,
    pub completed: usize,
    pub mean: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub std: Option<f64>,
    pub failures: usize,
    pub outcomes: BTreeMap<String, usize>,
}

/// Groups summaries by mode. Times are ticks-to-completion of completed runs;
/// the standard deviation is the population one.
pub fn traversal_table(summaries: &[RunSummary]) -> Vec<TraversalRow> {
    let mut by_mode: BTreeMap<Mode, Vec<&RunSummary>> = BTreeMap::new();
    for s in summaries {
        by_mode.entry(s.mode).or_default().push(s);
    }
    by_mode
        .into_iter()
        .map(|(mode, runs)| {
            let times: Vec<f64> = runs
                .iter()
                .filter(|r| r.outcome == crate::planner::Outcome::Completed)
                .map(|r| r.ticks as f64)
                .collect();
            let n = times.len() as f64;
            let mean = (!times.is_empty()).then(|| times.iter().sum::<f64>() / n);
            let mut outcomes = BTreeMap::new();
            for r in &runs {
                *outcomes.entry(r.outcome.as_str().to_string()).or_insert(0) += 1;
            }
            TraversalRow {
                mode,
                runs: runs.len(),
                completed: times.len(),
                mean,
                min: times.iter().copied().reduce(f64::min),
                max: times.iter().copied().reduce(f64::max),
                std: mean.map(|m| (times.iter().map(|t| (t - m).powi(2)).sum::<f64>() / n).sqrt()),
                failures: runs.iter().filter(|r| r.outcome.is_failure()).count(),
                outcomes,
            }
        })
        .collect()
}

pub fn traversal_table_csv(rows: &[TraversalRow]) -> String {
    let f = |v: Option<f64>| v.map_or(String::from("-"), |v| format!("{v:.2}"));
    let mut s = String::from("mode,runs,completed,mean,min,max,std,failures\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.mode,
            r.runs,
            r.completed,
            f(r.mean),
            f(r.min),
            f(r.max),
            f(r.std),
            r.failures
        );
    }
    s
}

/// Mean and standard deviation of coverage (percent) per tick across runs;
/// finished runs hold their last value.
pub fn coverage_curve_csv(traces: &[Vec<TickRecord>]) -> String {
    let len = traces.iter().map(|t| t.len()).max().unwrap_or(0);
    let mut s = String::from("tick,mean_coverage_pct,std_coverage_pct\n");
    for t in 0..len {
        let vals: Vec<f64> = traces
            .iter()
            .filter_map(|tr| tr.get(t).or(tr.last()).map(|r| 100.0 * r.coverage))
            .collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let _ = writeln!(s, "{t},{mean:.4},{std:.4}");
    }
    s
}

/// The six rows of the comparison table: each map type evaluated on
/// robot-centric and frontier-centric windows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EvalArm {
    #[serde(rename = "BL-RC")]
    BaselineRc,
    #[serde(rename = "SS-RC-OSMM")]
    RcOneShot,
    #[serde(rename = "SS-RC-PMM")]
    RcProbabilistic,
    #[serde(rename = "BL-FC")]
    BaselineFc,
    #[serde(rename = "SS-FC-OSMM")]
    FcOneShot,
    #[serde(rename = "SS-FC-PMM")]
    FcProbabilistic,
}

impl EvalArm {
    pub const ALL: [EvalArm; 6] = [
        EvalArm::BaselineRc,
        EvalArm::RcOneShot,
        EvalArm::RcProbabilistic,
        EvalArm::BaselineFc,
        EvalArm::FcOneShot,
        EvalArm::FcProbabilistic,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EvalArm::BaselineRc => "BL-RC",
            EvalArm::RcOneShot => "SS-RC-OSMM",
            EvalArm::RcProbabilistic => "SS-RC-PMM",
            EvalArm::BaselineFc => "BL-FC",
            EvalArm::FcOneShot => "SS-FC-OSMM",
            EvalArm::FcProbabilistic => "SS-FC-PMM",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub arm: EvalArm,
    pub metrics: RunMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub rows: Vec<EvalRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenario: ScenarioKind,
    pub embedder_seed: u64,
    pub k_predictions: usize,
    pub interval: usize,
    /// Metrics with windows pooled over all seeds.
    pub pooled: Vec<EvalRow>,
    pub per_seed: Vec<SeedReport>,
}

impl EvalReport {
    pub fn row<'a>(rows: &'a [EvalRow], arm: EvalArm) -> Option<&'a RunMetrics> {
        rows.iter().find(|r| r.arm == arm).map(|r| &r.metrics)
    }
}

/// Windows collected for one arm.
#[derive(Default)]
struct ArmWindows {
    evaluated: Vec<LocalGrid>,
    truth: Vec<LocalGrid>,
    ious: Vec<f64>,
    unknown: Vec<f64>,
}

/// The map as a binary cube: 1 where the map says occupied, else 0.
fn map_window(map: &GlobalOccupancyMap, template: &LocalGrid) -> Result<LocalGrid> {
    let values = (0..template.len())
        .map(|i| if map.is_occupied(&template.voxel_key(i)) { 1.0 } else { 0.0 })
        .collect();
    template.with_values(values)
}

/// One oracle-agent pass over the scenario tour. All arms see identical
/// scans; predictions at each window are sampled once and shared, with
/// one-shot arms merging the first sample and probabilistic arms fusing all.
fn evaluate_seed(
    cfg: &RunConfig,
    model: &DenoiserModel,
    seed: u64,
) -> Result<BTreeMap<EvalArm, ArmWindows>> {
    let scenario = cfg.scenario(seed)?;
    let world = &scenario.world;
    let start = scenario.start_poses[0];
    let planner = &cfg.explore.planner;
    let route = oracle_tour(world, &scenario.tour, start.z, planner)?;
    let stops = resample_polyline(&route, planner.step_length);
    let sampler = Sampler::new(&cfg.schedule)?;
    let setup = PredictionSetup {
        denoiser: model,
        sampler: &sampler,
        spec: cfg.grid,
        k: cfg.k_predictions,
        every: 1,
    };
    let fusion = &cfg.explore.fusion;
    let r = world.resolution();
    let mut sensed = fusion.new_map(r)?;
    let mut maps: BTreeMap<EvalArm, GlobalOccupancyMap> = [
        EvalArm::RcOneShot,
        EvalArm::RcProbabilistic,
        EvalArm::FcOneShot,
        EvalArm::FcProbabilistic,
    ]
    .into_iter()
    .map(|a| Ok((a, fusion.new_map(r)?)))
    .collect::<Result<_>>()?;
    let mut out: BTreeMap<EvalArm, ArmWindows> = EvalArm::ALL.iter().map(|a| (*a, ArmWindows::default())).collect();
    let mut yaw = start.yaw;
    for (tick, w) in stops.iter().enumerate() {
        if tick > 0 {
            let prev = stops[tick - 1];
            if prev != *w {
                yaw = (w.1 - prev.1).atan2(w.0 - prev.0);
            }
        }
        let pose = Pose::new(w.0, w.1, start.z, yaw);
        let scan = simulate_scan(world, &pose, &cfg.explore.lidar)?;
        insert_scan(&mut sensed, &scan, fusion)?;
        for (arm, map) in maps.iter_mut() {
            if matches!(arm, EvalArm::RcOneShot | EvalArm::FcOneShot) {
                insert_scan_overwriting(map, &scan, fusion)?;
            } else {
                insert_scan(map, &scan, fusion)?;
            }
        }
        if tick % cfg.evaluation.interval != 0 {
            continue;
        }
        let mut frontiers = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[tick as u64, u64::MAX]));
        if let Ok(g) = build_graph(&maps[&EvalArm::FcProbabilistic], &pose, planner, &mut rng) {
            frontiers = select_frontiers(&g, planner)
                .into_iter()
                .map(|i| (g.vertices[i].x, g.vertices[i].y))
                .collect();
        }
        let mut windows = vec![(false, (pose.x, pose.y))];
        windows.extend(frontiers.into_iter().map(|f| (true, f)));
        for (w_idx, (frontier, at)) in windows.into_iter().enumerate() {
            let wseed = derive_seed(seed, &[tick as u64, w_idx as u64]);
            let (submap, samples) = predict_window(&setup, &sensed, at, pose.z, wseed)?;
            let (bl, os, pm) = if frontier {
                (EvalArm::BaselineFc, EvalArm::FcOneShot, EvalArm::FcProbabilistic)
            } else {
                (EvalArm::BaselineRc, EvalArm::RcOneShot, EvalArm::RcProbabilistic)
            };
            let osmm = maps.get_mut(&os).expect("arm map");
            clear_window_predictions(osmm, &submap.grid);
            merge_one_shot(osmm, &samples[0], &submap, fusion)?;
            let pmm = maps.get_mut(&pm).expect("arm map");
            for s in &samples {
                fuse_prediction(pmm, s, &submap, fusion)?;
            }
            let truth = world.local_grid(&submap.grid)?;
            let ious = pairwise_ious(&samples, cfg.evaluation.iou_threshold)?;
            let unknown = submap.unknown_fraction();
            for arm in [bl, os, pm] {
                let map = if arm == bl { &sensed } else { &maps[&arm] };
                let entry = out.get_mut(&arm).expect("arm windows");
                entry.evaluated.push(map_window(map, &submap.grid)?);
                entry.truth.push(truth.clone());
                entry.ious.extend(ious.iter().copied());
                entry.unknown.push(unknown);
            }
        }
    }
    Ok(out)
}

fn rows_for(windows: &BTreeMap<EvalArm, ArmWindows>, embedder: &FeatureEmbedder) -> Result<Vec<EvalRow>> {
    EvalArm::ALL
        .iter()
        .filter(|a| windows[a].evaluated.len() >= 2)
        .map(|arm| {
            let w = &windows[arm];
            Ok(EvalRow {
                arm: *arm,
                metrics: evaluate_run(&w.evaluated, &w.truth, &w.ious, &w.unknown, embedder)?,
            })
        })
        .collect()
}

/// Oracle-agent evaluation over `evaluation.seeds` with one shared embedder.
/// Writes `evaluation.json` and `evaluation.csv` under `out_dir`.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<EvalReport> {
    cfg.validate()?;
    if cfg.evaluation.seeds.is_empty() {
        return Err(Error::Config("evaluation.seeds is empty".into()));
    }
    let model = load_model(cfg)?;
    create_dir(&cfg.out_dir)?;
    let embedder = FeatureEmbedder::new(cfg.evaluation.embedder_seed);
    let mut pooled: BTreeMap<EvalArm, ArmWindows> = EvalArm::ALL.iter().map(|a| (*a, ArmWindows::default())).collect();
    let mut per_seed = Vec::new();
    for seed in &cfg.evaluation.seeds {
        let windows = evaluate_seed(cfg, &model, *seed)?;
        per_seed.push(SeedReport {
            seed: *seed,
            rows: rows_for(&windows, &embedder)?,
        });
        for (arm, w) in windows {
            let p = pooled.get_mut(&arm).expect("arm");
            p.evaluated.extend(w.evaluated);
            p.truth.extend(w.truth);
            p.ious.extend(w.ious);
            p.unknown.extend(w.unknown);
        }
        log::info!("evaluated seed {seed}");
    }
    let report = EvalReport {
        scenario: cfg.scenario,
        embedder_seed: cfg.evaluation.embedder_seed,
        k_predictions: cfg.k_predictions,
        interval: cfg.evaluation.interval,
        pooled: rows_for(&pooled, &embedder)?,
        per_seed,
    };
    write_json(&cfg.out_dir.join("evaluation.json"), &report)?;
    write_atomic(&cfg.out_dir.join("evaluation.csv"), evaluation_csv(&report).as_bytes())?;
    Ok(report)
}

pub fn evaluation_csv(report: &EvalReport) -> String {
    let mut s = String::from("seed,arm,windows,fid,kid_x1000,mean_pairwise_iou,unknown_pct\n");
    let mut emit = |seed: &str, rows: &[EvalRow]| {
        for r in rows {
            let m = &r.metrics;
            let _ = writeln!(
                s,
                "{seed},{},{},{:.4},{:.4},{:.4},{:.2}",
                r.arm.as_str(),
                m.windows,
                m.fid,
                m.kid_x1000,
                m.iou_pmf.mean,
                m.unknown_pct
            );
        }
    };
    for p in &report.per_seed {
        emit(&p.seed.to_string(), &p.rows);
    }
    emit("all", &report.pooled);
    s
}

/// Samples `k` completions of the window at `pose` in a saved map. Writes
/// `submap.occv` (the conditioning window, 0.5 = unknown) and
/// `prediction_<i>.occv`, returning their paths.
pub fn cmd_predict(
    cfg: &RunConfig,
    map_file: &Path,
    pose: Pose,
    k: usize,
    seed: u64,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let map = crate::grid::io::load_map(map_file)?;
    let model = load_model(cfg)?;
    let sampler = Sampler::new(&cfg.schedule)?;
    let center = cfg.grid.center_for(pose);
    let submap = extract_submap(&map, center, cfg.grid.dims, cfg.grid.resolution)?;
    let seeds: Vec<u64> = (0..k as u64).map(|i| derive_seed(seed, &[i])).collect();
    let samples = crate::diffusion::sample_batch(&model, &submap, &sampler, &seeds)?;
    create_dir(out)?;
    let mut paths = vec![out.join("submap.occv")];
    save_grid(&paths[0], &submap.grid)?;
    for (i, s) in samples.iter().enumerate() {
        let p = out.join(format!("prediction_{i}.occv"));
        save_grid(&p, s)?;
        paths.push(p);
    }
    Ok(paths)
}
