//! Command-line front end: `simulate`, `solve` and `compare`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

pub mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::{self, compare_variants, run_cell, Cell, ComparisonReport};
use crate::io;
use crate::lanes::Variant;
use crate::sim::{simulate, SimulatedRun, RNG_ALGORITHM};

pub use config::{ExpandedConfig, ExpandedScenario, RunConfig, FORMAT_VERSION};

#[derive(Debug, Parser)]
#[command(name = "elevgraph", version, about = "Dual-lane pose-graph elevation drift experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write ground-truth, LiDAR and leg-odometry trajectories.
    Simulate(CommonArgs),
    /// Optimize one graph variant and write its trajectory and elevation profile.
    Solve {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value = "parallel")]
        variant: Variant,
    },
    /// Run several variants over all seeds and write comparison.csv.
    Compare {
        #[command(flatten)]
        common: CommonArgs,
        /// Restrict to these variants (repeatable). Defaults to the configured lanes.
        #[arg(long)]
        variant: Vec<Variant>,
    },
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML run configuration. Without it both presets run with default settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory, overriding `output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Single seed, overriding `seeds`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write elevation-profile SVG plots.
    #[arg(long)]
    pub plots: bool,
    /// Record measured wall times. Off by default so outputs are byte-identical across runs.
    #[arg(long)]
    pub timing: bool,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } => 2,
        _ => 1,
    }
}

pub fn execute(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Simulate(common) => {
            let cfg = prepare(common, "simulate")?;
            cmd_simulate(&cfg)?;
            Ok(0)
        }
        Command::Solve { common, variant } => {
            let cfg = prepare(common, "solve")?;
            let cells = cmd_solve(&cfg, *variant, common.plots, common.timing)?;
            Ok(if cells.iter().all(|c| !c.loop_closure.diverged) { 0 } else { 1 })
        }
        Command::Compare { common, variant } => {
            let mut cfg = prepare(common, "compare")?;
            if !variant.is_empty() {
                cfg.lanes = variant.iter().map(|v| cfg.lane(*v)).collect();
            }
            let reports = cmd_compare(&cfg, common.plots, common.timing)?;
            let any_ok = reports
                .iter()
                .flat_map(|r| &r.cells)
                .any(|c| !c.loop_closure.diverged);
            Ok(if any_ok { 0 } else { 1 })
        }
    }
}

#[derive(Serialize)]
struct Metadata<'a> {
    format_version: u32,
    command: &'a str,
    elevgraph_version: &'a str,
    rng_algorithm: &'a str,
    seeds: &'a [u64],
    config: &'a ExpandedConfig,
}

/// Loads and expands the config, applies flag overrides and writes the
/// expanded config and metadata into the output directory.
fn prepare(common: &CommonArgs, command: &str) -> Result<ExpandedConfig> {
    let raw = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let mut cfg = raw.expand()?;
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
    }
    let out = &cfg.output_dir;
    io::write_file(&out.join("config.toml"), cfg.to_toml()?.as_bytes())?;
    let meta = Metadata {
        format_version: FORMAT_VERSION,
        command,
        elevgraph_version: env!("CARGO_PKG_VERSION"),
        rng_algorithm: RNG_ALGORITHM,
        seeds: &cfg.seeds,
        config: &cfg,
    };
    let text = toml::to_string(&meta).map_err(|e| Error::Parse(e.to_string()))?;
    io::write_file(&out.join("metadata.toml"), text.as_bytes())?;
    Ok(cfg)
}

pub fn seed_dir(out: &Path, scenario: &str, seed: u64) -> PathBuf {
    out.join(scenario).join(format!("seed_{seed}"))
}

/// Writes `ground_truth.tum`, `lidar_odom.tum` and `fk_odom.tum` per scenario and seed.
pub fn cmd_simulate(cfg: &ExpandedConfig) -> Result<()> {
    for s in &cfg.scenario {
        for &seed in &cfg.seeds {
            let run = simulate(&s.spec, &s.noise, seed)?;
            write_run(&seed_dir(&cfg.output_dir, &s.name, seed), &s.name, seed, &run)?;
        }
    }
    Ok(())
}

fn write_run(dir: &Path, scenario: &str, seed: u64, run: &SimulatedRun) -> Result<()> {
    let header = format!("scenario {scenario} seed {seed}");
    for (name, samples) in [
        ("ground_truth.tum", run.ground_truth.as_slice()),
        ("lidar_odom.tum", run.lidar_odom.samples()),
        ("fk_odom.tum", run.fk_odom.as_slice()),
    ] {
        io::write_file(&dir.join(name), io::format_tum(samples, &[&header]).as_bytes())?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SolveSummary {
    scenario: String,
    variant: String,
    seed: u64,
    diverged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    failure: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    delta_z_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    delta_xy_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rmse_z_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rmse_xyz_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_abs_z_error_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    initial_cost: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_cost: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    converged: Option<bool>,
    wall_time_s: f64,
}

fn summary(cell: &Cell, timing: bool) -> SolveSummary {
    let stats = cell.stats.as_ref();
    SolveSummary {
        scenario: cell.scenario.clone(),
        variant: cell.variant.to_string(),
        seed: cell.seed,
        diverged: cell.loop_closure.diverged,
        failure: cell.failure.clone(),
        delta_z_m: cell.loop_closure.delta_z,
        delta_xy_m: cell.loop_closure.delta_xy,
        rmse_z_m: cell.error.as_ref().map(|e| e.rmse_z),
        rmse_xyz_m: cell.error.as_ref().map(|e| e.rmse_xyz),
        final_abs_z_error_m: cell.error.as_ref().and_then(|e| e.z_errors.last()).map(|z| z.abs()),
        iterations: stats.map(|s| s.iterations),
        initial_cost: stats.map(|s| s.initial_cost),
        final_cost: stats.map(|s| s.final_cost),
        converged: stats.map(|s| s.converged),
        wall_time_s: match (timing, stats) {
            (true, Some(s)) => s.wall_time.as_secs_f64(),
            _ => 0.0,
        },
    }
}

/// Simulates, optimizes `variant` and writes trajectory, stats and elevation
/// profile for every scenario and seed. Diverged cells are still written.
pub fn cmd_solve(cfg: &ExpandedConfig, variant: Variant, plots: bool, timing: bool) -> Result<Vec<Cell>> {
    let lane = cfg.lane(variant);
    let mut cells = Vec::new();
    for s in &cfg.scenario {
        for &seed in &cfg.seeds {
            let run = simulate(&s.spec, &s.noise, seed)?;
            let cell = run_cell(&s.name, &run, &lane, &cfg.solver, seed);
            let dir = seed_dir(&cfg.output_dir, &s.name, seed).join(variant.name());
            let text = toml::to_string(&summary(&cell, timing)).map_err(|e| Error::Parse(e.to_string()))?;
            io::write_file(&dir.join("stats.toml"), text.as_bytes())?;
            if !cell.trajectory.is_empty() {
                let header = format!("scenario {} seed {seed} variant {variant}", s.name);
                io::write_file(
                    &dir.join("trajectory.tum"),
                    io::format_tum(&cell.trajectory, &[&header]).as_bytes(),
                )?;
                let profile = eval::elevation_profile(&cell.trajectory, &run.ground_truth)?;
                io::write_file(&dir.join("elevation_profile.csv"), io::format_profile_csv(&profile).as_bytes())?;
                if plots {
                    let title = format!("{} seed {seed}: {variant}", s.name);
                    io::write_file(
                        &dir.join("elevation_profile.svg"),
                        io::profile_svg(&title, &profile).as_bytes(),
                    )?;
                }
            }
            if let Some(f) = &cell.failure {
                eprintln!("{} seed {seed} {variant}: {f}", s.name);
            }
            cells.push(cell);
        }
    }
    Ok(cells)
}

/// Runs every configured variant on every scenario and seed, writing
/// `comparison.csv`, `notes.txt` and optionally one SVG per scenario and variant
/// (first seed).
pub fn cmd_compare(cfg: &ExpandedConfig, plots: bool, timing: bool) -> Result<Vec<ComparisonReport>> {
    let mut reports = Vec::new();
    for s in &cfg.scenario {
        let report = compare_variants(&s.name, &s.spec, &s.noise, &cfg.lanes, &cfg.seeds, &cfg.solver)?;
        if plots {
            let run = simulate(&s.spec, &s.noise, cfg.seeds[0])?;
            for cell in report.cells.iter().filter(|c| c.seed == cfg.seeds[0]) {
                if cell.trajectory.is_empty() {
                    continue;
                }
                let profile = eval::elevation_profile(&cell.trajectory, &run.ground_truth)?;
                let title = format!("{} seed {}: {}", s.name, cell.seed, cell.variant);
                let path = cfg
                    .output_dir
                    .join("plots")
                    .join(format!("{}_{}.svg", s.name, cell.variant));
                io::write_file(&path, io::profile_svg(&title, &profile).as_bytes())?;
            }
        }
        reports.push(report);
    }
    let rows = io::comparison_rows(&reports, timing);
    io::write_file(
        &cfg.output_dir.join("comparison.csv"),
        io::format_comparison_csv(&rows)?.as_bytes(),
    )?;
    let mut notes = String::new();
    for r in &reports {
        for c in &r.caveats {
            if !notes.contains(c.as_str()) {
                notes.push_str(c);
                notes.push('\n');
            }
        }
        for cell in r.cells.iter().filter(|c| c.failure.is_some()) {
            notes.push_str(&format!(
                "{} seed {} {}: {}\n",
                cell.scenario,
                cell.seed,
                cell.variant,
                cell.failure.as_deref().unwrap_or_default()
            ));
        }
    }
    io::write_file(&cfg.output_dir.join("notes.txt"), notes.as_bytes())?;
    Ok(reports)
}
