//! `msloc` command-line tool.
//!
//! Exit status is 0 on success, 2 when an input is missing or malformed and
//! 3 when an estimator fails numerically.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use msloc::eval::{evaluate, EvaluationReport};
use msloc::io::{read_trajectory, write_dataset, write_epoch_errors, write_trajectory, LoadedDataset};
use msloc::map::{load_map, save_map, LocalProjection};
use msloc::pipeline::{run, Mode, PipelineConfig};
use msloc::sim::{Dataset, Scenario, Trajectory, World};
use msloc::sins::EarthModel;

#[derive(Parser)]
#[command(
    name = "msloc",
    version,
    about = "Multi-sensor localization: simulate, map, localize, evaluate"
)]
struct Cli {
    /// Pipeline configuration file (TOML); defaults apply to missing keys.
    #[arg(long, env = "MSLOC_CONFIG", global = true)]
    config: Option<PathBuf>,

    /// More log output; repeat for debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Survey a scenario's world and write the tiled map directory.
    BuildMap {
        /// Preset name or scenario TOML file.
        #[arg(long, default_value = "nominal")]
        scenario: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate a drive and write a dataset directory.
    Simulate {
        #[arg(long, default_value = "nominal")]
        scenario: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay a dataset and write the estimated trajectory (CSV).
    Localize {
        /// Dataset directory written by `simulate`.
        #[arg(long)]
        data: PathBuf,
        /// Map directory; the dataset's own map when absent.
        #[arg(long)]
        map: Option<PathBuf>,
        /// 2sys, 3sys, lidar-only, gnss-only, intensity-only, heading-off or fixed-gamma.
        #[arg(long, default_value = "3sys")]
        mode: Mode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a trajectory with ground truth and print the metric table.
    Evaluate {
        #[arg(long)]
        trajectory: PathBuf,
        /// Dataset directory; supplies truth and the map projection.
        #[arg(long, required_unless_present = "truth")]
        data: Option<PathBuf>,
        /// Truth trajectory CSV, when no dataset is given.
        #[arg(long, conflicts_with = "data")]
        truth: Option<PathBuf>,
        /// Per-epoch error CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn scenario(spec: &str, seed: Option<u64>) -> Result<Scenario> {
    let path = Path::new(spec);
    let mut s = if path.exists() {
        Scenario::load(path)?
    } else {
        Scenario::preset(spec)?
    };
    if let Some(seed) = seed {
        s.seed = seed;
    }
    Ok(s)
}

fn pipeline_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            Ok(PipelineConfig::from_toml(&text)?)
        }
        None => Ok(PipelineConfig::default()),
    }
}

fn build_map(spec: &str, seed: Option<u64>, out: &Path) -> Result<()> {
    let s = scenario(spec, seed)?;
    let traj = Trajectory::new(&s.trajectory)?;
    let world = World::generate(&s.world, &traj, s.seed)?;
    let v = &s.survey;
    let map = world.build_map(
        false,
        v.passes,
        (v.intensity_sigma, v.altitude_sigma),
        v.tile_dimension,
        s.seed,
    )?;
    save_map(&map, out)?;
    println!(
        "{} tiles at {} m/cell -> {}",
        map.tiles().count(),
        map.resolution(),
        out.display()
    );
    Ok(())
}

fn simulate(spec: &str, seed: Option<u64>, out: &Path) -> Result<()> {
    let s = scenario(spec, seed)?;
    let d = Dataset::generate(&s)?;
    write_dataset(out, &d, None)?;
    println!(
        "{}: {:.0} s, {} IMU samples, {} LiDAR frames, {} GNSS epochs -> {}",
        s.name,
        d.truth.last().map_or(0.0, |t| t.t),
        d.imu.len(),
        d.lidar.len(),
        d.gnss.len(),
        out.display()
    );
    Ok(())
}

fn localize(data: &Path, map: Option<&Path>, mode: Mode, out: &Path, cfg: &PipelineConfig) -> Result<()> {
    let ds = LoadedDataset::open(data)?;
    let map = match map {
        Some(p) => Some(load_map(p)?),
        None => ds.map()?,
    };
    if mode.uses_lidar() && map.is_none() {
        anyhow::bail!(msloc::Error::InvalidArgument(format!(
            "mode {mode} needs a map and {} has none",
            data.display()
        )));
    }
    let result = run(&ds.log, &ds.scans, map.as_ref(), mode, cfg)?;
    write_trajectory(out, &result.records)?;
    println!(
        "{mode}: {} epochs, {} LiDAR fixes, {} GNSS solutions, {} frames and {} epochs skipped -> {}",
        result.records.len(),
        result.fixes.len(),
        result.gnss.len(),
        result.skipped_frames,
        result.skipped_epochs,
        out.display()
    );
    Ok(())
}

fn evaluate_files(trajectory: &Path, data: Option<&Path>, truth: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let est = read_trajectory(trajectory)?;
    let (truth, proj) = match (data, truth) {
        (Some(dir), _) => {
            let ds = LoadedDataset::open(dir)?;
            (ds.truth()?, ds.info.projection)
        }
        (None, Some(path)) => {
            let truth = read_trajectory(path)?;
            let first = truth.first().ok_or(msloc::Error::NoData)?;
            let proj = LocalProjection::new(EarthModel::Wgs84, first.pos.x, first.pos.y, first.pos.z);
            (truth, proj)
        }
        (None, None) => unreachable!("clap requires one of them"),
    };
    let points = |r: &[msloc::pipeline::NavRecord]| r.iter().map(|r| r.point(&proj)).collect::<Vec<_>>();
    let report: EvaluationReport = evaluate(&points(&est), &points(&truth))?;
    print!("{}", report.table());
    if report.skipped > 0 {
        println!("{} epochs without truth within 10 ms were skipped", report.skipped);
    }
    if let Some(out) = out {
        write_epoch_errors(out, &report)?;
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::BuildMap { scenario, seed, out } => build_map(scenario, *seed, out),
        Command::Simulate { scenario, seed, out } => simulate(scenario, *seed, out),
        Command::Localize { data, map, mode, out } => {
            let cfg = pipeline_config(cli.config.as_deref())?;
            localize(data, map.as_deref(), *mode, out, &cfg)
        }
        Command::Evaluate {
            trajectory,
            data,
            truth,
            out,
        } => evaluate_files(trajectory, data.as_deref(), truth.as_deref(), out.as_deref()),
    }
}

/// 2 for bad inputs, 3 for numerical failures.
fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<msloc::Error>()) {
        Some(m) if !m.is_input_error() => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
