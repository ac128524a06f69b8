//! Ellipse-tracking study: a single-integrator tracking law mapped onto a
//! unicycle through the NID, with the offset `l` and the horizon `dt`
//! re-optimized online by the PMPC solver, against a fixed `l*` baseline.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, RowVector3, Vector1, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::kinematics::{
    nid_forward, si_to_unicycle, static_optimal_l, unicycle_derivative, unicycle_to_wheels, NidParam, Pose,
    RobotGeometry, SiPoint, SiVelocity, UnicycleInput,
};
use crate::pmpc::{self, InverseHorizon, ParamBox, ParametricDynamics, PmpcProblem, RunningCost, SolverConfig};

/// `r(t) = (a1 cos(rate t), a2 sin(rate t))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipseReference {
    pub a1: f64,
    pub a2: f64,
    pub rate: f64,
}

impl Default for EllipseReference {
    fn default() -> Self {
        Self {
            a1: 0.4,
            a2: 0.2,
            rate: 0.1,
        }
    }
}

impl EllipseReference {
    /// Time of one full orbit.
    pub fn period(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.rate
    }
}

/// Reference point and its time derivative.
pub fn reference(t: f64, r: &EllipseReference) -> (SiPoint, SiVelocity) {
    let (s, c) = (r.rate * t).sin_cos();
    (
        SiPoint::new(r.a1 * c, r.a2 * s),
        SiVelocity::new(-r.a1 * r.rate * s, r.a2 * r.rate * c),
    )
}

/// Tracking law for the single integrator: `(r - x_si) + ṙ`.
pub fn si_controller(x_si: &SiPoint, t: f64, r: &EllipseReference) -> SiVelocity {
    let (pos, vel) = reference(t, r);
    SiVelocity::new(pos.p1 - x_si.p1 + vel.v1, pos.p2 - x_si.p2 + vel.v2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub geometry: RobotGeometry,
    /// Weight of `l²` in the PMPC running cost.
    pub beta: f64,
    /// Precision weight of the static selection.
    pub alpha: f64,
    pub control_period: f64,
    pub duration: f64,
    pub reference: EllipseReference,
    pub solver: SolverConfig,
    pub initial_pose: Pose,
    pub initial_l: f64,
    pub initial_dt: f64,
    /// Gradient steps per control period after the initial solve.
    pub warm_start_steps: usize,
    /// Iteration cap of the initial solve at `t = 0`.
    pub initial_solve_iters: usize,
    pub l_min: f64,
    pub l_max: f64,
    /// Clamp `‖u_si‖` to the robot's `v_bar` before the NID map.
    pub saturate: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let reference = EllipseReference::default();
        Self {
            geometry: RobotGeometry::ROBOTARIUM,
            beta: 0.01,
            alpha: 0.99,
            control_period: 0.033,
            duration: reference.period(),
            reference,
            solver: SolverConfig::default(),
            initial_pose: Pose::new(0.4, 0.0, std::f64::consts::FRAC_PI_2),
            initial_l: 0.078,
            initial_dt: 1.0,
            warm_start_steps: 3,
            initial_solve_iters: 5000,
            l_min: 1e-4,
            l_max: 1.0,
            saturate: true,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidExperimentConfig(msg));
        for (name, v) in [("beta", self.beta), ("alpha", self.alpha)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::WeightOutOfRange { name, value: v });
            }
        }
        if !(self.control_period.is_finite() && self.control_period > 0.0) {
            return bad(format!("control_period must be > 0, got {}", self.control_period));
        }
        if !(self.duration.is_finite() && self.duration >= 0.0) {
            return bad(format!("duration must be >= 0, got {}", self.duration));
        }
        let r = &self.reference;
        for (name, v) in [("a1", r.a1), ("a2", r.a2), ("rate", r.rate)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("reference {name} must be >= 0, got {v}"));
            }
        }
        if !(self.l_min > 0.0 && self.l_min < self.l_max && self.l_max.is_finite()) {
            return bad(format!("need 0 < l_min < l_max, got [{}, {}]", self.l_min, self.l_max));
        }
        if !(self.initial_l >= self.l_min && self.initial_l <= self.l_max) {
            return bad(format!(
                "initial_l {} outside [{}, {}]",
                self.initial_l, self.l_min, self.l_max
            ));
        }
        if !self.initial_pose.is_finite() {
            return bad("initial pose must be finite".into());
        }
        self.solver.validate()?;
        if !(self.initial_dt >= self.solver.dt_min && self.initial_dt <= self.solver.dt_max) {
            return bad(format!(
                "initial_dt {} outside [{}, {}]",
                self.initial_dt, self.solver.dt_min, self.solver.dt_max
            ));
        }
        if self.warm_start_steps == 0 || self.initial_solve_iters == 0 {
            return bad("warm_start_steps and initial_solve_iters must be >= 1".into());
        }
        Ok(())
    }

    fn solver_config(&self, max_iters: usize) -> SolverConfig {
        SolverConfig {
            max_iters,
            param_box: Some(ParamBox::scalar(self.l_min, self.l_max).expect("validated bounds")),
            ..self.solver.clone()
        }
    }
}

/// Closed-loop unicycle under the NID tracking law, seen as a parametric
/// system in `p = [l]`. Also carries the PMPC running cost
/// `(1 - β) (ω_r - ω_l)² + β l²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedLoop {
    pub geometry: RobotGeometry,
    pub reference: EllipseReference,
    pub beta: f64,
    pub saturate: bool,
}

/// Values and first derivatives of the closed loop at one `(x, l, t)`.
#[derive(Debug, Clone, Copy)]
struct LoopEval {
    df_dx: Matrix3<f64>,
    df_dl: Vector3<f64>,
    cost: f64,
    dcost_dx: RowVector3<f64>,
    dcost_dl: f64,
}

impl ClosedLoop {
    pub fn from_config(config: &ExperimentConfig) -> Self {
        Self {
            geometry: config.geometry,
            reference: config.reference,
            beta: config.beta,
            saturate: config.saturate,
        }
    }

    /// Commanded single-integrator velocity at pose `x` with offset `l`.
    pub fn command(&self, pose: &Pose, l: NidParam, t: f64) -> SiVelocity {
        let u = si_controller(&nid_forward(pose, l), t, &self.reference);
        if self.saturate {
            u.clamp_norm(self.geometry.v_bar())
        } else {
            u
        }
    }

    pub fn unicycle_input(&self, pose: &Pose, l: NidParam, t: f64) -> UnicycleInput {
        si_to_unicycle(&self.command(pose, l, t), pose.theta, l)
    }

    /// `(f, running cost)` without derivatives.
    fn eval_value(&self, x: &Vector3<f64>, l: f64, t: f64) -> (Vector3<f64>, f64) {
        let (s, c) = x[2].sin_cos();
        let (r, rdot) = reference(t, &self.reference);
        let mut w = Vector2::new(r.p1 + rdot.v1 - x[0] - l * c, r.p2 + rdot.v2 - x[1] - l * s);
        let n = w.norm();
        let v_bar = self.geometry.v_bar();
        if self.saturate && n > v_bar {
            w *= v_bar / n;
        }
        let v = c * w[0] + s * w[1];
        let omega = (c * w[1] - s * w[0]) / l;
        let wheel_diff = self.geometry.l_w() / self.geometry.r_w() * omega;
        let cost = (1.0 - self.beta) * wheel_diff * wheel_diff + self.beta * l * l;
        (Vector3::new(v * c, v * s, omega), cost)
    }

    fn eval(&self, x: &Vector3<f64>, l: f64, t: f64) -> LoopEval {
        let (s, c) = x[2].sin_cos();
        let (r, rdot) = reference(t, &self.reference);
        let w = Vector2::new(r.p1 + rdot.v1 - x[0] - l * c, r.p2 + rdot.v2 - x[1] - l * s);
        // ∂x_si/∂x and ∂x_si/∂l
        let dxsi_dx = Matrix2x3::new(1.0, 0.0, -l * s, 0.0, 1.0, l * c);
        let dxsi_dl = Vector2::new(c, s);

        let (u, du_dw) = {
            let n = w.norm();
            let v_bar = self.geometry.v_bar();
            if self.saturate && n > v_bar {
                let what = w / n;
                (w * (v_bar / n), (Matrix2::identity() - what * what.transpose()) * (v_bar / n))
            } else {
                (w, Matrix2::identity())
            }
        };
        let du_dx = -(du_dw * dxsi_dx);
        let du_dl = -(du_dw * dxsi_dl);

        let heading = Vector2::new(c, s);
        let normal = Vector2::new(-s, c);
        let v = heading.dot(&u);
        let omega = normal.dot(&u) / l;

        let mut dv_dx = heading.transpose() * du_dx;
        dv_dx[2] += normal.dot(&u);
        let mut domega_dx = normal.transpose() * du_dx / l;
        domega_dx[2] -= v / l;
        let dv_dl = heading.dot(&du_dl);
        let domega_dl = normal.dot(&du_dl) / l - omega / l;

        let mut df_dx = Matrix3::zeros();
        df_dx.set_row(0, &(dv_dx * c));
        df_dx.set_row(1, &(dv_dx * s));
        df_dx.set_row(2, &domega_dx);
        df_dx[(0, 2)] -= v * s;
        df_dx[(1, 2)] += v * c;
        let df_dl = Vector3::new(dv_dl * c, dv_dl * s, domega_dl);

        let k = self.geometry.l_w() / self.geometry.r_w();
        let wheel_diff = k * omega;
        let cost = (1.0 - self.beta) * wheel_diff * wheel_diff + self.beta * l * l;
        let g = 2.0 * (1.0 - self.beta) * k * wheel_diff;
        LoopEval {
            df_dx,
            df_dl,
            cost,
            dcost_dx: domega_dx * g,
            dcost_dl: g * domega_dl + 2.0 * self.beta * l,
        }
    }
}

impl ParametricDynamics<3, 1> for ClosedLoop {
    fn f(&self, x: &Vector3<f64>, p: &Vector1<f64>, t: f64) -> Vector3<f64> {
        self.eval_value(x, p[0], t).0
    }
    fn df_dx(&self, x: &Vector3<f64>, p: &Vector1<f64>, t: f64) -> Matrix3<f64> {
        self.eval(x, p[0], t).df_dx
    }
    fn df_dp(&self, x: &Vector3<f64>, p: &Vector1<f64>, t: f64) -> Vector3<f64> {
        self.eval(x, p[0], t).df_dl
    }
    fn jacobians(&self, x: &Vector3<f64>, p: &Vector1<f64>, t: f64) -> (Matrix3<f64>, Vector3<f64>) {
        let e = self.eval(x, p[0], t);
        (e.df_dx, e.df_dl)
    }
}

impl RunningCost<3, 1> for ClosedLoop {
    fn value(&self, x: &Vector3<f64>, p: &Vector1<f64>, t: f64) -> f64 {
        self.eval_value(x, p[0], t).1
    }
    fn dl_dx(&self, x: &Vector3<f64>, p: &Vector1<f64>, t: f64) -> Vector3<f64> {
        self.eval(x, p[0], t).dcost_dx.transpose()
    }
    fn dl_dp(&self, x: &Vector3<f64>, p: &Vector1<f64>, t: f64) -> Vector1<f64> {
        Vector1::new(self.eval(x, p[0], t).dcost_dl)
    }
    fn gradients(&self, x: &Vector3<f64>, p: &Vector1<f64>, t: f64) -> (Vector3<f64>, Vector1<f64>) {
        let e = self.eval(x, p[0], t);
        (e.dcost_dx.transpose(), Vector1::new(e.dcost_dl))
    }
}

/// Running cost and its partials at one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunningCostEval {
    pub value: f64,
    /// `∂L/∂(x1, x2, theta)`.
    pub d_state: [f64; 3],
    pub d_l: f64,
}

pub fn pmpc_running_cost(state: &Pose, l: NidParam, t: f64, config: &ExperimentConfig) -> RunningCostEval {
    let e = ClosedLoop::from_config(config).eval(&Vector3::new(state.x1, state.x2, state.theta), l.get(), t);
    RunningCostEval {
        value: e.cost,
        d_state: [e.dcost_dx[0], e.dcost_dx[1], e.dcost_dx[2]],
        d_l: e.dcost_dl,
    }
}

pub type TrackingProblem = PmpcProblem<ClosedLoop, ClosedLoop, InverseHorizon, 3>;

/// The PMPC program starting from `pose` at time `t`.
pub fn build_pmpc_problem(pose: &Pose, t: f64, config: &ExperimentConfig) -> TrackingProblem {
    let closed_loop = ClosedLoop::from_config(config);
    PmpcProblem {
        dynamics: closed_loop,
        running_cost: closed_loop,
        sampling_cost: InverseHorizon,
        x0: Vector3::new(pose.x1, pose.x2, pose.theta),
        t0: t,
    }
}

/// One logged control period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub t: f64,
    pub pose: Pose,
    pub x_si: SiPoint,
    pub reference: SiPoint,
    pub l: f64,
    /// Current PMPC horizon; 0 for the static baseline.
    pub dt: f64,
    pub v: f64,
    pub omega: f64,
    pub omega_r: f64,
    pub omega_l: f64,
    /// `‖x_si - r(t)‖`.
    pub tracking_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverFailure {
    pub t: f64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryLog {
    pub rows: Vec<LogRow>,
    /// Solver errors; the previous `(l, dt)` was kept at these times.
    pub solver_failures: Vec<SolverFailure>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub mean_tracking_error: f64,
    pub mean_abs_wheel_diff: f64,
    pub mean_l: f64,
    pub mean_dt: f64,
    pub max_abs_omega: f64,
}

/// How `(l, dt)` evolve along a run.
enum Schedule {
    Pmpc { l: f64, dt: f64 },
    Static { l: f64 },
}

fn make_row(pose: Pose, t: f64, l: NidParam, dt: f64, closed_loop: &ClosedLoop, geometry: &RobotGeometry) -> LogRow {
    let x_si = nid_forward(&pose, l);
    let (r, _) = reference(t, &closed_loop.reference);
    let u = closed_loop.unicycle_input(&pose, l, t);
    let w = unicycle_to_wheels(&u, geometry);
    LogRow {
        t,
        pose,
        x_si,
        reference: r,
        l: l.get(),
        dt,
        v: u.v,
        omega: u.omega,
        omega_r: w.omega_r,
        omega_l: w.omega_l,
        tracking_error: x_si.distance(&r),
    }
}

/// RK4 over one control period with the unicycle input held constant.
fn advance(pose: &Pose, u: &UnicycleInput, period: f64) -> Pose {
    let add = |p: &Pose, d: &crate::kinematics::PoseRate, h: f64| {
        Pose::new(p.x1 + h * d.x1, p.x2 + h * d.x2, p.theta + h * d.theta)
    };
    let k1 = unicycle_derivative(pose, u);
    let k2 = unicycle_derivative(&add(pose, &k1, 0.5 * period), u);
    let k3 = unicycle_derivative(&add(pose, &k2, 0.5 * period), u);
    let k4 = unicycle_derivative(&add(pose, &k3, period), u);
    Pose::new(
        pose.x1 + period / 6.0 * (k1.x1 + 2.0 * (k2.x1 + k3.x1) + k4.x1),
        pose.x2 + period / 6.0 * (k1.x2 + 2.0 * (k2.x2 + k3.x2) + k4.x2),
        pose.theta + period / 6.0 * (k1.theta + 2.0 * (k2.theta + k3.theta) + k4.theta),
    )
}

/// Runs the loop; on failure the rows logged so far come back with the error.
fn run(config: &ExperimentConfig, mut schedule: Schedule) -> std::result::Result<TrajectoryLog, (Error, TrajectoryLog)> {
    if let Err(e) = config.validate() {
        return Err((e, TrajectoryLog::default()));
    }
    let closed_loop = ClosedLoop::from_config(config);
    let steps = (config.duration / config.control_period + 1e-9).floor() as usize;
    let mut log = TrajectoryLog {
        rows: Vec::with_capacity(steps + 1),
        solver_failures: Vec::new(),
    };
    let mut pose = config.initial_pose;

    for k in 0..=steps {
        let t = k as f64 * config.control_period;
        let (l, dt) = match &mut schedule {
            Schedule::Static { l } => (*l, 0.0),
            Schedule::Pmpc { l, dt } => {
                let iters = if k == 0 {
                    config.initial_solve_iters
                } else {
                    config.warm_start_steps
                };
                let problem = build_pmpc_problem(&pose, t, config);
                match pmpc::solve(&problem, &Vector1::new(*l), *dt, &config.solver_config(iters)) {
                    Ok(sol) => {
                        *l = sol.p_star[0];
                        *dt = sol.dt_star;
                    }
                    Err(e) => log.solver_failures.push(SolverFailure {
                        t,
                        message: e.to_string(),
                    }),
                }
                (*l, *dt)
            }
        };
        let l = match NidParam::new(l) {
            Ok(l) => l,
            Err(e) => return Err((e, log)),
        };
        let row = make_row(pose, t, l, dt, &closed_loop, &config.geometry);
        log.rows.push(row);
        if k < steps {
            pose = advance(&pose, &UnicycleInput::new(row.v, row.omega), config.control_period);
            if !pose.is_finite() {
                let e = Error::Divergence {
                    time: t + config.control_period,
                };
                return Err((e, log));
            }
        }
    }
    Ok(log)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// `l` and `dt` re-optimized online.
    Pmpc,
    /// `l` fixed at the static optimum for `alpha`.
    Static,
}

/// A finished or aborted run. On abort, `log` holds the rows recorded before
/// the failure.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub log: TrajectoryLog,
    pub error: Option<Error>,
}

pub fn run_experiment(config: &ExperimentConfig, mode: Mode) -> RunOutcome {
    let schedule = match mode {
        Mode::Pmpc => Schedule::Pmpc {
            l: config.initial_l,
            dt: config.initial_dt,
        },
        Mode::Static => match static_optimal_l(config.alpha, &config.geometry) {
            Ok(l) => Schedule::Static { l: l.get() },
            Err(e) => {
                return RunOutcome {
                    log: TrajectoryLog::default(),
                    error: Some(e),
                }
            }
        },
    };
    match run(config, schedule) {
        Ok(log) => RunOutcome { log, error: None },
        Err((e, log)) => RunOutcome { log, error: Some(e) },
    }
}

fn into_result(outcome: RunOutcome) -> Result<TrajectoryLog> {
    match outcome.error {
        None => Ok(outcome.log),
        Some(e) => Err(e),
    }
}

/// Receding-horizon PMPC run: a full solve at `t = 0`, then
/// `warm_start_steps` gradient steps every control period.
pub fn run_pmpc_experiment(config: &ExperimentConfig) -> Result<TrajectoryLog> {
    into_result(run_experiment(config, Mode::Pmpc))
}

/// Same loop with `l` fixed at the static optimum for `config.alpha`.
pub fn run_static_experiment(config: &ExperimentConfig) -> Result<TrajectoryLog> {
    into_result(run_experiment(config, Mode::Static))
}

/// Trapezoid-rule time averages over the log. A single-row log averages to
/// that row.
pub fn compute_metrics(log: &TrajectoryLog) -> Result<Metrics> {
    let rows = &log.rows;
    let first = rows.first().ok_or(Error::EmptyLog)?;
    let average = |g: &dyn Fn(&LogRow) -> f64| -> f64 {
        let span = rows[rows.len() - 1].t - first.t;
        if rows.len() == 1 || span <= 0.0 {
            return g(first);
        }
        let area: f64 = rows.windows(2).map(|w| 0.5 * (w[1].t - w[0].t) * (g(&w[0]) + g(&w[1]))).sum();
        area / span
    };
    Ok(Metrics {
        mean_tracking_error: average(&|r| r.tracking_error),
        mean_abs_wheel_diff: average(&|r| (r.omega_r - r.omega_l).abs()),
        mean_l: average(&|r| r.l),
        mean_dt: average(&|r| r.dt),
        max_abs_omega: rows.iter().map(|r| r.omega.abs()).fold(0.0, f64::max),
    })
}
