use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use occugen::grid::Pose;
use occugen::harness::{cmd_evaluate, cmd_explore, cmd_predict, cmd_train, RunConfig};
use occugen::planner::Mode;
use occugen::Error;

#[derive(Parser)]
#[command(name = "occugen", version, about = "Generative occupancy prediction for simulated exploration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run config; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// BL, SS-RC-OSMM, SS-RC-PMM, SS-FC-OSMM or SS-FC-PMM.
    #[arg(long)]
    mode: Option<String>,
    /// Output directory. Overrides `out_dir`, except for `predict` where it
    /// only receives the sampled grids.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the synthetic corpus and train the denoiser.
    Train(Common),
    /// Run seeded exploration episodes and write traces, maps and reports.
    Explore(Common),
    /// Score every arm against ground truth windows.
    Evaluate(Common),
    /// Sample completions of one window of a saved map.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Map snapshot (OCCG1).
        #[arg(long)]
        map: PathBuf,
        /// Robot pose `x,y,z[,yaw]` at foot height.
        #[arg(long, allow_hyphen_values = true)]
        pose: String,
        #[arg(long, default_value_t = 3)]
        k: usize,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::UnknownScenario(_) | Error::InvalidArgument(_) => 2,
        Error::Io { .. } | Error::MalformedHeader(_) | Error::VersionMismatch { .. } | Error::Truncated { .. } => 3,
        _ => 4,
    }
}

fn load(common: &Common) -> Result<RunConfig, Error> {
    let mut cfg = load_keeping_out_dir(common)?;
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

/// Applies every override except `--out`.
fn load_keeping_out_dir(common: &Common) -> Result<RunConfig, Error> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = &common.mode {
        cfg.mode = mode.parse::<Mode>()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Train(common) => print_json(&cmd_train(&load(&common)?)?),
        Command::Explore(common) => {
            let summaries = cmd_explore(&load(&common)?)?;
            for s in summaries.iter().filter(|s| s.outcome.is_failure()) {
                log::warn!("seed {} failed: {}", s.seed, s.outcome.as_str());
            }
            print_json(&summaries)
        }
        Command::Evaluate(common) => print_json(&cmd_evaluate(&load(&common)?)?),
        Command::Predict { common, map, pose, k } => {
            // the checkpoint stays relative to the configured out_dir
            let cfg = load_keeping_out_dir(&common)?;
            let pose: Pose = pose.parse()?;
            let out = common.out.clone().unwrap_or_else(|| cfg.out_dir.join("predict"));
            let paths = cmd_predict(&cfg, &map, pose, k, cfg.seed, &out)?;
            for p in paths {
                println!("{}", p.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("bad arguments").trim_start_matches("error: ");
            eprintln!("error: usage: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {}: {msg}", e.code());
            ExitCode::from(exit_code(&e))
        }
    }
}
