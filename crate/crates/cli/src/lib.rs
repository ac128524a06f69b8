//! Library side of the `nid-pmpc` command-line tool: config loading, CSV
//! output and the three subcommands. `main.rs` only parses arguments and
//! maps [`CliError`] to exit codes.

pub mod config;
pub mod csv_io;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{debug, info, warn};
use nalgebra::Vector1;
use nid_pmpc::toy::{self, ExponentialGrowth, ScaledParamJacobian, ZeroCost};
use nid_pmpc::{
    build_pmpc_problem, check_gradients, compute_metrics, run_experiment, ClosedLoop, Error as CoreError,
    ExperimentConfig, GradientReport, InverseHorizon, Metrics, Mode, NoSamplingCost, PmpcProblem, RunOutcome,
    SolverConfig, TrajectoryLog,
};
use thiserror::Error;

pub use config::{load_config, parse_config, ConfigError};

/// Relative tolerance of the gradient self-check.
pub const GRADIENT_REL_TOL: f64 = 1e-3;
/// Absolute floor below which a gradient mismatch is ignored.
pub const GRADIENT_ABS_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{mode} run failed: {message}")]
    Diverged { mode: &'static str, message: String },

    #[error("gradient check failed for {0}")]
    GradientCheck(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Io { .. } => 2,
            CliError::Diverged { .. } => 3,
            CliError::GradientCheck(_) => 4,
        }
    }
}

fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Pmpc => "pmpc",
        Mode::Static => "static",
    }
}

/// `<prefix><suffix>` without touching the prefix's directory part.
pub fn output_path(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), CliError> {
    let io = |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    body(&mut w).map_err(io)?;
    w.flush().map_err(io)
}

fn csv_to_io(e: csv::Error) -> std::io::Error {
    std::io::Error::other(e)
}

/// Writes `<prefix>_trajectory.csv` and, for a non-empty log,
/// `<prefix>_metrics.csv`.
pub fn write_run(prefix: &Path, log: &TrajectoryLog) -> Result<Option<Metrics>, CliError> {
    let traj = output_path(prefix, "_trajectory.csv");
    write_file(&traj, |w| csv_io::write_trajectory(w, &log.rows).map_err(csv_to_io))?;
    info!("wrote {}", traj.display());
    let metrics = match compute_metrics(log) {
        Ok(m) => m,
        Err(_) => return Ok(None),
    };
    let path = output_path(prefix, "_metrics.csv");
    write_file(&path, |w| csv_io::write_metrics(w, &metrics).map_err(csv_to_io))?;
    info!("wrote {}", path.display());
    Ok(Some(metrics))
}

/// Turns a run outcome into the exit status of `simulate`/`compare`, after
/// the log has been written.
fn check_outcome(mode: Mode, outcome: &RunOutcome) -> Result<(), CliError> {
    if let Some(e) = &outcome.error {
        return Err(match e {
            CoreError::Divergence { .. } => CliError::Diverged {
                mode: mode_name(mode),
                message: e.to_string(),
            },
            other => CliError::Config(ConfigError::Invalid(other.to_string())),
        });
    }
    let failures = &outcome.log.solver_failures;
    if let Some(first) = failures.first() {
        return Err(CliError::Diverged {
            mode: mode_name(mode),
            message: format!(
                "solver failed at {} control period(s), first at t = {} s: {}",
                failures.len(),
                first.t,
                first.message
            ),
        });
    }
    Ok(())
}

fn run_logged(config: &ExperimentConfig, mode: Mode) -> RunOutcome {
    info!("running {} experiment over {} s", mode_name(mode), config.duration);
    let start = std::time::Instant::now();
    let outcome = run_experiment(config, mode);
    info!(
        "{} run: {} rows in {:.2?}",
        mode_name(mode),
        outcome.log.rows.len(),
        start.elapsed()
    );
    for f in &outcome.log.solver_failures {
        warn!("solver failure at t = {}: {}", f.t, f.message);
    }
    outcome
}

pub fn cmd_simulate(mode: Mode, config_path: Option<&Path>, prefix: &Path) -> Result<Metrics, CliError> {
    let config = load_config(config_path)?;
    debug!("configuration: {config:?}");
    let outcome = run_logged(&config, mode);
    let metrics = write_run(prefix, &outcome.log)?;
    check_outcome(mode, &outcome)?;
    Ok(metrics.expect("a successful run logs at least one row"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comparison {
    pub pmpc: Metrics,
    pub fixed: Metrics,
}

impl Comparison {
    /// Lower mean tracking error wins.
    pub fn winner(&self) -> &'static str {
        let (p, s) = (self.pmpc.mean_tracking_error, self.fixed.mean_tracking_error);
        if p < s {
            "pmpc"
        } else if s < p {
            "static"
        } else {
            "tie"
        }
    }

    /// `key = value` lines, one per metric and mode, then the winner.
    pub fn summary(&self) -> String {
        let mut out = String::from("# PMPC vs static offset; lower mean_tracking_error wins\n");
        for (name, m) in [("pmpc", &self.pmpc), ("static", &self.fixed)] {
            for (key, v) in csv_io::METRICS_HEADER.iter().zip([
                m.mean_tracking_error,
                m.mean_abs_wheel_diff,
                m.mean_l,
                m.mean_dt,
                m.max_abs_omega,
            ]) {
                out.push_str(&format!("{name}.{key} = {v}\n"));
            }
        }
        out.push_str(&format!("winner = {}\n", self.winner()));
        out
    }
}

/// Runs both modes (in parallel) on the same config and writes
/// `<prefix>_pmpc_*`, `<prefix>_static_*` and `<prefix>_summary.txt`.
pub fn cmd_compare(config_path: Option<&Path>, prefix: &Path) -> Result<Comparison, CliError> {
    let config = load_config(config_path)?;
    let (pmpc, fixed) = std::thread::scope(|s| {
        let handle = s.spawn(|| run_logged(&config, Mode::Pmpc));
        let fixed = run_logged(&config, Mode::Static);
        (handle.join().expect("pmpc run panicked"), fixed)
    });
    let m_pmpc = write_run(&output_path(prefix, "_pmpc"), &pmpc.log)?;
    let m_fixed = write_run(&output_path(prefix, "_static"), &fixed.log)?;
    check_outcome(Mode::Pmpc, &pmpc)?;
    check_outcome(Mode::Static, &fixed)?;

    let cmp = Comparison {
        pmpc: m_pmpc.expect("non-empty log"),
        fixed: m_fixed.expect("non-empty log"),
    };
    let summary = cmp.summary();
    let path = output_path(prefix, "_summary.txt");
    write_file(&path, |w| w.write_all(summary.as_bytes()))?;
    print!("{summary}");
    Ok(cmp)
}

/// Switches for `check-gradients`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GradientCheckOptions {
    /// Replace the scalar problems' running cost by `L = 0`.
    pub zero_cost: bool,
    /// Multiply every `∂f/∂p` by this factor (a deliberate bug).
    pub corrupt_param_jacobian: Option<f64>,
}

/// One named report of the self-check.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedReport {
    pub problem: &'static str,
    pub report: GradientReport,
}

fn scalar_reports(opts: &GradientCheckOptions, solver: &SolverConfig) -> Result<Vec<NamedReport>, CoreError> {
    let factor = opts.corrupt_param_jacobian.unwrap_or(1.0);
    let x0 = Vector1::new(1.0);
    let (p, dt) = (Vector1::new(0.5), 1.0);
    let exp_dyn = ScaledParamJacobian {
        inner: ExponentialGrowth,
        factor,
    };
    let quad = toy::quadratic_problem(0.8);
    let quad = PmpcProblem::new(
        ScaledParamJacobian {
            inner: quad.dynamics,
            factor,
        },
        quad.running_cost,
        quad.sampling_cost,
        quad.x0,
        quad.t0,
    );
    let (exp, quad) = if opts.zero_cost {
        (
            check_gradients(&PmpcProblem::new(exp_dyn, ZeroCost, NoSamplingCost, x0, 0.0), &p, dt, solver)?,
            check_gradients(
                &PmpcProblem::new(quad.dynamics, ZeroCost, NoSamplingCost, quad.x0, 0.0),
                &Vector1::new(-0.3),
                1.4,
                solver,
            )?,
        )
    } else {
        let e = toy::exponential_problem(1.0);
        (
            check_gradients(&PmpcProblem::new(exp_dyn, e.running_cost, e.sampling_cost, x0, 0.0), &p, dt, solver)?,
            check_gradients(&quad, &Vector1::new(-0.3), 1.4, solver)?,
        )
    };
    Ok(vec![
        NamedReport {
            problem: "exponential",
            report: exp,
        },
        NamedReport {
            problem: "quadratic",
            report: quad,
        },
    ])
}

fn ellipse_report(config: &ExperimentConfig, factor: f64) -> Result<NamedReport, CoreError> {
    let base = build_pmpc_problem(&config.initial_pose, 0.0, config);
    let problem: PmpcProblem<_, ClosedLoop, InverseHorizon, 3> = PmpcProblem::new(
        ScaledParamJacobian {
            inner: base.dynamics,
            factor,
        },
        base.running_cost,
        base.sampling_cost,
        base.x0,
        base.t0,
    );
    let report = check_gradients(
        &problem,
        &Vector1::new(config.initial_l),
        config.initial_dt,
        &config.solver,
    )?;
    Ok(NamedReport {
        problem: "ellipse",
        report,
    })
}

/// Runs the self-check on the scalar problems and on the ellipse instance at
/// the configured initial state, returning every report.
pub fn gradient_reports(
    config: &ExperimentConfig,
    opts: &GradientCheckOptions,
) -> Result<Vec<NamedReport>, CoreError> {
    let mut reports = scalar_reports(opts, &config.solver)?;
    reports.push(ellipse_report(config, opts.corrupt_param_jacobian.unwrap_or(1.0))?);
    Ok(reports)
}

/// Table of every comparison, one line each.
pub fn format_reports(reports: &[NamedReport]) -> String {
    let mut out = format!(
        "{:<12} {:<6} {:>24} {:>24} {:>10} {:>10} {}\n",
        "problem", "comp", "analytic", "finite_diff", "rel_err", "abs_err", "status"
    );
    for r in reports {
        for e in &r.report.entries {
            let ok = e.passes(GRADIENT_REL_TOL, GRADIENT_ABS_FLOOR);
            out.push_str(&format!(
                "{:<12} {:<6} {:>24e} {:>24e} {:>10.3e} {:>10.3e} {}\n",
                r.problem,
                e.name,
                e.analytic,
                e.finite_difference,
                e.rel_error,
                e.abs_error,
                if ok { "ok" } else { "FAIL" }
            ));
        }
    }
    out
}

pub fn cmd_check_gradients(config_path: Option<&Path>, opts: &GradientCheckOptions) -> Result<(), CliError> {
    let config = load_config(config_path)?;
    if opts.corrupt_param_jacobian.is_some() {
        warn!("debug option: df/dp is deliberately scaled by {:?}", opts.corrupt_param_jacobian);
    }
    let reports = gradient_reports(&config, opts).map_err(|e| CliError::Diverged {
        mode: "gradient check",
        message: e.to_string(),
    })?;
    print!("{}", format_reports(&reports));
    let failed: Vec<&str> = reports
        .iter()
        .filter(|r| !r.report.passes(GRADIENT_REL_TOL, GRADIENT_ABS_FLOOR))
        .map(|r| r.problem)
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::GradientCheck(failed.join(", ")))
    }
}
