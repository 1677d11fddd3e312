//! Loop-closure discrepancy, ground-truth error and multi-seed variant comparison.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lanes::{build_graph, extract_output_trajectory, LaneConfig, OdometrySample, Variant};
use crate::sim::{simulate, ScenarioSpec, SensorNoiseSpec};
use crate::solver::{optimize, SolveStats, SolverSettings};

/// Caveat attached to every comparison that includes the baseline.
pub const BASELINE_CAVEAT: &str = "baseline: a scan-matching front-end crash cannot occur in a \
back-end simulation; the baseline cell reports the converged but drifted LiDAR-only solution";

/// Start-to-finish discrepancy on a closed loop.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoopClosureReport {
    /// `None` when the solve diverged.
    pub delta_z: Option<f64>,
    pub delta_xy: Option<f64>,
    pub diverged: bool,
}

impl LoopClosureReport {
    pub fn diverged() -> Self {
        Self {
            delta_z: None,
            delta_xy: None,
            diverged: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryError {
    pub rmse_xyz: f64,
    pub rmse_z: f64,
    pub max_abs_z: f64,
    /// Estimated minus true z per keyframe.
    pub z_errors: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProfilePoint {
    pub index: usize,
    pub t: f64,
    pub z_est: f64,
    pub z_true: f64,
}

pub fn loop_closure_discrepancy(traj: &[OdometrySample]) -> Result<LoopClosureReport> {
    if traj.len() < 2 {
        return Err(Error::Validation(format!(
            "loop closure needs at least 2 poses, got {}",
            traj.len()
        )));
    }
    let first = traj[0].pose.translation();
    let last = traj[traj.len() - 1].pose.translation();
    let d = last - first;
    Ok(LoopClosureReport {
        delta_z: Some(d.z.abs()),
        delta_xy: Some(d.x.hypot(d.y)),
        diverged: false,
    })
}

fn check_matched(traj: &[OdometrySample], gt: &[OdometrySample]) -> Result<()> {
    if traj.len() != gt.len() {
        return Err(Error::Validation(format!(
            "trajectory has {} poses but ground truth has {}",
            traj.len(),
            gt.len()
        )));
    }
    for (k, (a, b)) in traj.iter().zip(gt).enumerate() {
        if (a.t - b.t).abs() > 1e-9 {
            return Err(Error::Validation(format!(
                "timestamp mismatch at keyframe {k}: {} vs {}",
                a.t, b.t
            )));
        }
    }
    Ok(())
}

/// Translation error against ground truth with no alignment applied.
pub fn trajectory_error(traj: &[OdometrySample], gt: &[OdometrySample]) -> Result<TrajectoryError> {
    check_matched(traj, gt)?;
    if traj.is_empty() {
        return Err(Error::Validation("empty trajectory".into()));
    }
    let n = traj.len() as f64;
    let mut sum_xyz = 0.0;
    let mut sum_z = 0.0;
    let mut max_abs_z = 0.0f64;
    let mut z_errors = Vec::with_capacity(traj.len());
    for (a, b) in traj.iter().zip(gt) {
        let d = a.pose.translation() - b.pose.translation();
        sum_xyz += d.norm_squared();
        sum_z += d.z * d.z;
        max_abs_z = max_abs_z.max(d.z.abs());
        z_errors.push(d.z);
    }
    Ok(TrajectoryError {
        rmse_xyz: (sum_xyz / n).sqrt(),
        rmse_z: (sum_z / n).sqrt(),
        max_abs_z,
        z_errors,
    })
}

pub fn elevation_profile(traj: &[OdometrySample], gt: &[OdometrySample]) -> Result<Vec<ProfilePoint>> {
    check_matched(traj, gt)?;
    Ok(traj
        .iter()
        .zip(gt)
        .enumerate()
        .map(|(index, (a, b))| ProfilePoint {
            index,
            t: a.t,
            z_est: a.pose.translation().z,
            z_true: b.pose.translation().z,
        })
        .collect())
}

/// Outcome of one (scenario, variant, seed) run.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub scenario: String,
    pub variant: Variant,
    pub seed: u64,
    pub loop_closure: LoopClosureReport,
    pub error: Option<TrajectoryError>,
    pub stats: Option<SolveStats>,
    /// Optimized output trajectory; empty when the run failed.
    pub trajectory: Vec<OdometrySample>,
    /// Error message when the run failed before producing a solution.
    pub failure: Option<String>,
}

/// Mean and standard deviation over the converged cells of one variant.
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub scenario: String,
    pub variant: Variant,
    pub count: usize,
    pub mean: Metrics,
    pub std: Metrics,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Metrics {
    pub delta_z: f64,
    pub delta_xy: f64,
    pub rmse_z: f64,
    pub rmse_xyz: f64,
    pub iterations: f64,
    pub final_cost: f64,
    pub wall_time_s: f64,
}

impl Metrics {
    fn of(cell: &Cell) -> Option<Self> {
        if cell.loop_closure.diverged {
            return None;
        }
        let err = cell.error.as_ref()?;
        let stats = cell.stats.as_ref()?;
        Some(Self {
            delta_z: cell.loop_closure.delta_z?,
            delta_xy: cell.loop_closure.delta_xy?,
            rmse_z: err.rmse_z,
            rmse_xyz: err.rmse_xyz,
            iterations: stats.iterations as f64,
            final_cost: stats.final_cost,
            wall_time_s: stats.wall_time.as_secs_f64(),
        })
    }

    fn to_array(self) -> [f64; 7] {
        [
            self.delta_z,
            self.delta_xy,
            self.rmse_z,
            self.rmse_xyz,
            self.iterations,
            self.final_cost,
            self.wall_time_s,
        ]
    }

    fn from_array(a: [f64; 7]) -> Self {
        Self {
            delta_z: a[0],
            delta_xy: a[1],
            rmse_z: a[2],
            rmse_xyz: a[3],
            iterations: a[4],
            final_cost: a[5],
            wall_time_s: a[6],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonReport {
    /// Cells ordered by seed, then by the order of the requested configs.
    pub cells: Vec<Cell>,
    /// One entry per requested config, in request order.
    pub aggregates: Vec<Aggregate>,
    pub caveats: Vec<String>,
}

impl ComparisonReport {
    pub fn aggregate(&self, variant: Variant) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.variant == variant)
    }

    pub fn cells_for(&self, variant: Variant) -> impl Iterator<Item = &Cell> {
        self.cells.iter().filter(move |c| c.variant == variant)
    }
}

/// Builds, optimizes and scores one variant on an already simulated run.
pub fn run_cell(
    scenario: &str,
    run: &crate::sim::SimulatedRun,
    cfg: &LaneConfig,
    settings: &SolverSettings,
    seed: u64,
) -> Cell {
    let mut cell = Cell {
        scenario: scenario.to_string(),
        variant: cfg.variant,
        seed,
        loop_closure: LoopClosureReport::diverged(),
        error: None,
        stats: None,
        trajectory: Vec::new(),
        failure: None,
    };
    let outcome = (|| -> Result<()> {
        let hybrid = build_graph(&run.lidar_odom, &run.fk_odom, cfg)?;
        let (values, stats) = optimize(&hybrid.graph, &hybrid.values, settings)?;
        let traj = extract_output_trajectory(&hybrid, &values)?;
        cell.error = Some(trajectory_error(&traj, &run.ground_truth)?);
        cell.loop_closure = if stats.converged {
            loop_closure_discrepancy(&traj)?
        } else {
            LoopClosureReport::diverged()
        };
        cell.stats = Some(stats);
        cell.trajectory = traj;
        Ok(())
    })();
    if let Err(e) = outcome {
        cell.loop_closure = LoopClosureReport::diverged();
        cell.failure = Some(e.to_string());
    }
    cell
}

fn mean_std(rows: &[[f64; 7]]) -> (Metrics, Metrics) {
    let n = rows.len() as f64;
    let mut mean = [0.0; 7];
    let mut std = [0.0; 7];
    if rows.is_empty() {
        return (Metrics::from_array([f64::NAN; 7]), Metrics::from_array([f64::NAN; 7]));
    }
    for r in rows {
        for i in 0..7 {
            mean[i] += r[i] / n;
        }
    }
    if rows.len() > 1 {
        for r in rows {
            for i in 0..7 {
                std[i] += (r[i] - mean[i]).powi(2) / (n - 1.0);
            }
        }
    }
    (Metrics::from_array(mean), Metrics::from_array(std.map(f64::sqrt)))
}

/// Simulates each seed once and runs every config on the identical streams.
///
/// A failed or non-converged cell is recorded as diverged and excluded from the
/// aggregates; it never aborts the other cells.
pub fn compare_variants(
    scenario: &str,
    spec: &ScenarioSpec,
    noise: &SensorNoiseSpec,
    configs: &[LaneConfig],
    seeds: &[u64],
    settings: &SolverSettings,
) -> Result<ComparisonReport> {
    if configs.is_empty() || seeds.is_empty() {
        return Err(Error::Validation(
            "comparison needs at least one variant and one seed".into(),
        ));
    }
    let runs: Vec<(u64, Result<crate::sim::SimulatedRun>)> = seeds
        .par_iter()
        .map(|&seed| (seed, simulate(spec, noise, seed)))
        .collect();
    let jobs: Vec<(usize, usize)> = (0..seeds.len())
        .flat_map(|s| (0..configs.len()).map(move |c| (s, c)))
        .collect();
    let cells: Vec<Cell> = jobs
        .par_iter()
        .map(|&(s, c)| {
            let (seed, run) = &runs[s];
            match run {
                Ok(run) => run_cell(scenario, run, &configs[c], settings, *seed),
                Err(e) => Cell {
                    scenario: scenario.to_string(),
                    variant: configs[c].variant,
                    seed: *seed,
                    loop_closure: LoopClosureReport::diverged(),
                    error: None,
                    stats: None,
                    trajectory: Vec::new(),
                    failure: Some(e.to_string()),
                },
            }
        })
        .collect();

    let aggregates = configs
        .iter()
        .enumerate()
        .map(|(c, cfg)| {
            let rows: Vec<[f64; 7]> = cells
                .iter()
                .skip(c)
                .step_by(configs.len())
                .filter_map(Metrics::of)
                .map(Metrics::to_array)
                .collect();
            let (mean, std) = mean_std(&rows);
            Aggregate {
                scenario: scenario.to_string(),
                variant: cfg.variant,
                count: rows.len(),
                mean,
                std,
            }
        })
        .collect();

    let mut caveats = Vec::new();
    if configs.iter().any(|c| c.variant == Variant::Baseline) {
        caveats.push(BASELINE_CAVEAT.to_string());
    }
    Ok(ComparisonReport {
        cells,
        aggregates,
        caveats,
    })
}
