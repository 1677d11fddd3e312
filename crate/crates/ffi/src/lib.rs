//! C ABI over `elevgraph`.
//!
//! Every function returns an [`EgStatus`]; on failure the message is kept per
//! thread and read with [`eg_last_error_message`]. Handles are opaque and must
//! be released with their `_free` function. Poses cross the boundary as
//! [`EgPose`] (translation plus unit quaternion, TUM order).

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use elevgraph::cli::RunConfig;
use elevgraph::eval::{compare_variants, Cell};
use elevgraph::factors::{make_coupling_factor, BetweenFactor, ElevationPriorFactor, PriorFactor};
use elevgraph::lanes::Variant;
use elevgraph::solver::optimize;
use elevgraph::{CouplingSigmas, DiagonalNoise, Error, Graph, Pose3, SolverSettings, Values};
use nalgebra::Vector3;

/// Result code of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    MissingNode = 3,
    IllConditioned = 4,
    Config = 5,
    Io = 6,
    /// Solver stopped at the iteration cap.
    NotConverged = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EgVariant {
    Baseline = 0,
    Serial = 1,
    Parallel = 2,
}

impl From<Variant> for EgVariant {
    fn from(v: Variant) -> Self {
        match v {
            Variant::Baseline => EgVariant::Baseline,
            Variant::Serial => EgVariant::Serial,
            Variant::Parallel => EgVariant::Parallel,
        }
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EgPose {
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
    pub qx: f64,
    pub qy: f64,
    pub qz: f64,
    pub qw: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EgSolverSettings {
    pub max_iterations: u32,
    pub initial_lambda: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    pub relative_cost_tolerance: f64,
    pub gradient_tolerance: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EgSolveStats {
    pub iterations: u32,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub converged: bool,
    pub wall_time_s: f64,
}

/// One (scenario, variant, seed) result of a comparison. Metrics are NaN when
/// `diverged` is set.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EgCell {
    pub scenario_index: u32,
    pub variant: EgVariant,
    pub seed: u64,
    pub delta_z: f64,
    pub delta_xy: f64,
    pub rmse_z: f64,
    pub rmse_xyz: f64,
    pub iterations: u32,
    pub diverged: bool,
}

/// Factor graph plus its current estimate.
pub struct EgGraph {
    graph: Graph,
    values: Values,
}

/// Cells of a comparison run, ordered by scenario, then seed, then variant.
pub struct EgReport {
    scenarios: Vec<String>,
    cells: Vec<EgCell>,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> EgStatus {
    match e {
        Error::MissingNode(_) => EgStatus::MissingNode,
        Error::IllConditioned { .. } => EgStatus::IllConditioned,
        Error::Config { .. } | Error::Parse(_) => EgStatus::Config,
        Error::Io(_) => EgStatus::Io,
        _ => EgStatus::InvalidArgument,
    }
}

/// Runs `f`, converting errors and panics into a status and a stored message.
fn guard(f: impl FnOnce() -> Result<(), (EgStatus, String)>) -> EgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            EgStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_error(format!("internal panic: {msg}"));
            EgStatus::Panic
        }
    }
}

fn lib(e: Error) -> (EgStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(name: &str) -> (EgStatus, String) {
    (EgStatus::NullPointer, format!("`{name}` is null"))
}

unsafe fn as_ref<'a, T>(p: *const T, name: &str) -> Result<&'a T, (EgStatus, String)> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn as_mut<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, (EgStatus, String)> {
    p.as_mut().ok_or_else(|| null(name))
}

unsafe fn sigmas6(p: *const f64, name: &str) -> Result<[f64; 6], (EgStatus, String)> {
    if p.is_null() {
        return Err(null(name));
    }
    let mut out = [0.0; 6];
    out.copy_from_slice(std::slice::from_raw_parts(p, 6));
    Ok(out)
}

fn to_pose(p: &EgPose) -> Result<Pose3, (EgStatus, String)> {
    let q = [p.qw, p.qx, p.qy, p.qz];
    let norm = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm.is_finite() && norm > 1e-12) || ![p.tx, p.ty, p.tz].iter().all(|x| x.is_finite()) {
        return Err((EgStatus::InvalidArgument, format!("invalid pose {p:?}")));
    }
    Ok(Pose3::from_parts(p.qw, p.qx, p.qy, p.qz, Vector3::new(p.tx, p.ty, p.tz)))
}

fn from_pose(p: &Pose3) -> EgPose {
    let t = p.translation();
    let [qw, qx, qy, qz] = p.quaternion_wxyz();
    EgPose {
        tx: t.x,
        ty: t.y,
        tz: t.z,
        qx,
        qy,
        qz,
        qw,
    }
}

impl From<SolverSettings> for EgSolverSettings {
    fn from(s: SolverSettings) -> Self {
        Self {
            max_iterations: s.max_iterations.min(u32::MAX as usize) as u32,
            initial_lambda: s.initial_lambda,
            lambda_up: s.lambda_up,
            lambda_down: s.lambda_down,
            relative_cost_tolerance: s.relative_cost_tolerance,
            gradient_tolerance: s.gradient_tolerance,
        }
    }
}

impl From<EgSolverSettings> for SolverSettings {
    fn from(s: EgSolverSettings) -> Self {
        Self {
            max_iterations: s.max_iterations as usize,
            initial_lambda: s.initial_lambda,
            lambda_up: s.lambda_up,
            lambda_down: s.lambda_down,
            relative_cost_tolerance: s.relative_cost_tolerance,
            gradient_tolerance: s.gradient_tolerance,
        }
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn eg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated,
/// always NUL-terminated when `len > 0`). Returns the full message length
/// excluding the terminator, so a caller can size a second call.
#[no_mangle]
pub unsafe extern "C" fn eg_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

#[no_mangle]
pub extern "C" fn eg_solver_settings_default() -> EgSolverSettings {
    SolverSettings::default().into()
}

/// Creates an empty graph in `*out`.
#[no_mangle]
pub unsafe extern "C" fn eg_graph_new(out: *mut *mut EgGraph) -> EgStatus {
    guard(|| {
        let out = as_mut(out, "out")?;
        *out = Box::into_raw(Box::new(EgGraph {
            graph: Graph::new(),
            values: Values::new(),
        }));
        Ok(())
    })
}

/// Releases a graph. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn eg_graph_free(graph: *mut EgGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// Sets the initial estimate of node `id`, replacing any previous one.
#[no_mangle]
pub unsafe extern "C" fn eg_graph_set_value(graph: *mut EgGraph, id: u64, pose: *const EgPose) -> EgStatus {
    guard(|| {
        let g = as_mut(graph, "graph")?;
        let p = to_pose(as_ref(pose, "pose")?)?;
        g.values.set(id as usize, p);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn eg_graph_get_value(graph: *const EgGraph, id: u64, out: *mut EgPose) -> EgStatus {
    guard(|| {
        let g = as_ref(graph, "graph")?;
        let out = as_mut(out, "out")?;
        *out = from_pose(g.values.get(id as usize).map_err(lib)?);
        Ok(())
    })
}

/// Full-pose prior with six sigmas (translation first).
#[no_mangle]
pub unsafe extern "C" fn eg_graph_add_prior(
    graph: *mut EgGraph,
    id: u64,
    measured: *const EgPose,
    sigmas: *const f64,
) -> EgStatus {
    guard(|| {
        let g = as_mut(graph, "graph")?;
        let m = to_pose(as_ref(measured, "measured")?)?;
        let noise = DiagonalNoise::new(&sigmas6(sigmas, "sigmas")?).map_err(lib)?;
        g.graph.add(PriorFactor::new(id as usize, m, noise).map_err(lib)?);
        Ok(())
    })
}

/// Relative-pose factor from `a` to `b`.
#[no_mangle]
pub unsafe extern "C" fn eg_graph_add_between(
    graph: *mut EgGraph,
    a: u64,
    b: u64,
    measured: *const EgPose,
    sigmas: *const f64,
) -> EgStatus {
    guard(|| {
        let g = as_mut(graph, "graph")?;
        let m = to_pose(as_ref(measured, "measured")?)?;
        let noise = DiagonalNoise::new(&sigmas6(sigmas, "sigmas")?).map_err(lib)?;
        g.graph.add(BetweenFactor::new(a as usize, b as usize, m, noise).map_err(lib)?);
        Ok(())
    })
}

/// Absolute height prior on node `id`.
#[no_mangle]
pub unsafe extern "C" fn eg_graph_add_elevation(graph: *mut EgGraph, id: u64, z: f64, sigma: f64) -> EgStatus {
    guard(|| {
        let g = as_mut(graph, "graph")?;
        g.graph.add(ElevationPriorFactor::new(id as usize, z, sigma).map_err(lib)?);
        Ok(())
    })
}

/// Identity coupling between `x` and `y`. `sigmas` may be null for the
/// defaults (tight z, loose elsewhere).
#[no_mangle]
pub unsafe extern "C" fn eg_graph_add_coupling(graph: *mut EgGraph, x: u64, y: u64, sigmas: *const f64) -> EgStatus {
    guard(|| {
        let g = as_mut(graph, "graph")?;
        let s = if sigmas.is_null() {
            CouplingSigmas::default()
        } else {
            CouplingSigmas::new(sigmas6(sigmas, "sigmas")?).map_err(lib)?
        };
        g.graph.add(make_coupling_factor(x as usize, y as usize, &s).map_err(lib)?);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn eg_graph_factor_count(graph: *const EgGraph, out: *mut usize) -> EgStatus {
    guard(|| {
        *as_mut(out, "out")? = as_ref(graph, "graph")?.graph.len();
        Ok(())
    })
}

/// Total whitened cost of the current estimate.
#[no_mangle]
pub unsafe extern "C" fn eg_graph_cost(graph: *const EgGraph, out: *mut f64) -> EgStatus {
    guard(|| {
        let g = as_ref(graph, "graph")?;
        *as_mut(out, "out")? = g.graph.total_cost(&g.values).map_err(lib)?;
        Ok(())
    })
}

/// Optimizes in place. `settings` may be null for the defaults; `stats` may be
/// null. Returns `NotConverged` (with the estimate still updated) when the
/// iteration cap is reached.
#[no_mangle]
pub unsafe extern "C" fn eg_graph_optimize(
    graph: *mut EgGraph,
    settings: *const EgSolverSettings,
    stats: *mut EgSolveStats,
) -> EgStatus {
    guard(|| {
        let g = as_mut(graph, "graph")?;
        let settings: SolverSettings = match settings.as_ref() {
            Some(s) => (*s).into(),
            None => SolverSettings::default(),
        };
        settings.validate().map_err(lib)?;
        let (values, s) = optimize(&g.graph, &g.values, &settings).map_err(lib)?;
        g.values = values;
        if let Some(out) = stats.as_mut() {
            *out = EgSolveStats {
                iterations: s.iterations as u32,
                initial_cost: s.initial_cost,
                final_cost: s.final_cost,
                converged: s.converged,
                wall_time_s: s.wall_time.as_secs_f64(),
            };
        }
        if s.converged {
            Ok(())
        } else {
            Err((
                EgStatus::NotConverged,
                format!("stopped after {} iterations at cost {:e}", s.iterations, s.final_cost),
            ))
        }
    })
}

fn cell(scenario_index: usize, c: &Cell) -> EgCell {
    let nan = f64::NAN;
    let err = c.error.as_ref().filter(|_| !c.loop_closure.diverged);
    EgCell {
        scenario_index: scenario_index as u32,
        variant: c.variant.into(),
        seed: c.seed,
        delta_z: c.loop_closure.delta_z.unwrap_or(nan),
        delta_xy: c.loop_closure.delta_xy.unwrap_or(nan),
        rmse_z: err.map_or(nan, |e| e.rmse_z),
        rmse_xyz: err.map_or(nan, |e| e.rmse_xyz),
        iterations: c.stats.as_ref().map_or(0, |s| s.iterations as u32),
        diverged: c.loop_closure.diverged,
    }
}

/// Simulates and compares every configured variant from a TOML run
/// configuration (same schema as the CLI's `--config`; an empty string means
/// all defaults). Nothing is written to disk.
#[no_mangle]
pub unsafe extern "C" fn eg_compare_run(config_toml: *const c_char, out: *mut *mut EgReport) -> EgStatus {
    guard(|| {
        let out = as_mut(out, "out")?;
        *out = ptr::null_mut();
        if config_toml.is_null() {
            return Err(null("config_toml"));
        }
        let text = CStr::from_ptr(config_toml)
            .to_str()
            .map_err(|e| (EgStatus::InvalidArgument, format!("config is not UTF-8: {e}")))?;
        let cfg = RunConfig::from_toml(text).and_then(|c| c.expand()).map_err(lib)?;
        let mut report = EgReport {
            scenarios: Vec::new(),
            cells: Vec::new(),
        };
        for (i, s) in cfg.scenario.iter().enumerate() {
            let r = compare_variants(&s.name, &s.spec, &s.noise, &cfg.lanes, &cfg.seeds, &cfg.solver).map_err(lib)?;
            report.scenarios.push(s.name.clone());
            report.cells.extend(r.cells.iter().map(|c| cell(i, c)));
        }
        *out = Box::into_raw(Box::new(report));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn eg_report_free(report: *mut EgReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

#[no_mangle]
pub unsafe extern "C" fn eg_report_cell_count(report: *const EgReport, out: *mut usize) -> EgStatus {
    guard(|| {
        *as_mut(out, "out")? = as_ref(report, "report")?.cells.len();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn eg_report_cell(report: *const EgReport, index: usize, out: *mut EgCell) -> EgStatus {
    guard(|| {
        let r = as_ref(report, "report")?;
        let c = r.cells.get(index).ok_or_else(|| {
            (
                EgStatus::InvalidArgument,
                format!("cell {index} out of range ({} cells)", r.cells.len()),
            )
        })?;
        *as_mut(out, "out")? = *c;
        Ok(())
    })
}

/// Copies the name of scenario `index` into `buf` like
/// [`eg_last_error_message`] and stores its full length in `*len_out`.
#[no_mangle]
pub unsafe extern "C" fn eg_report_scenario_name(
    report: *const EgReport,
    index: usize,
    buf: *mut c_char,
    len: usize,
    len_out: *mut usize,
) -> EgStatus {
    guard(|| {
        let r = as_ref(report, "report")?;
        let name = r
            .scenarios
            .get(index)
            .ok_or_else(|| (EgStatus::InvalidArgument, format!("scenario {index} out of range")))?;
        if !buf.is_null() && len > 0 {
            let n = name.len().min(len - 1);
            ptr::copy_nonoverlapping(name.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        if let Some(l) = len_out.as_mut() {
            *l = name.len();
        }
        Ok(())
    })
}
