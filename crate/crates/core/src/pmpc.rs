//! Variable-horizon parametric MPC.
//!
//! The decision variables are a constant parameter vector `p` and the length
//! `dt` of the prediction horizon. The cost
//!
//! ```text
//! J(p, dt) = ∫_{t0}^{t0+dt} L(x(s), p, s) ds + C(dt),   ẋ = f(x, p, t),  x(t0) = x0
//! ```
//!
//! is differentiated with a costate `λ` and a parameter costate `ξ`, both
//! integrated backwards from zero terminal values:
//!
//! ```text
//! λ̇ = -∂xLᵀ - ∂xfᵀ λ        ξ̇ = -∂pLᵀ - ∂pfᵀ λ
//! ∂pJ = ξ(t0)ᵀ              ∂dtJ = L(x(t0+dt), p, t0+dt) + C'(dt)
//! ```
//!
//! Both passes use fixed-step RK4 on the same grid. The state is stored at
//! the grid nodes and linearly interpolated at the backward stage points.
//!
//! State and parameter dimensions are const generics (`N`, `M`).

use nalgebra::{SMatrix, SVector};

use crate::error::{Error, Result};

/// `ẋ = f(x, p, t)` together with its Jacobians.
///
/// Implementations must be reentrant and continuously differentiable in `x`
/// and `p`; [`check_gradients`] is the runtime self-test for the latter.
pub trait ParametricDynamics<const N: usize, const M: usize> {
    fn f(&self, x: &SVector<f64, N>, p: &SVector<f64, M>, t: f64) -> SVector<f64, N>;
    /// `∂f/∂x`, N×N.
    fn df_dx(&self, x: &SVector<f64, N>, p: &SVector<f64, M>, t: f64) -> SMatrix<f64, N, N>;
    /// `∂f/∂p`, N×M.
    fn df_dp(&self, x: &SVector<f64, N>, p: &SVector<f64, M>, t: f64) -> SMatrix<f64, N, M>;

    /// `(∂f/∂x, ∂f/∂p)` in one call; override when the two share work.
    fn jacobians(
        &self,
        x: &SVector<f64, N>,
        p: &SVector<f64, M>,
        t: f64,
    ) -> (SMatrix<f64, N, N>, SMatrix<f64, N, M>) {
        (self.df_dx(x, p, t), self.df_dp(x, p, t))
    }
}

/// Integrand `L(x, p, t)` with its gradients.
pub trait RunningCost<const N: usize, const M: usize> {
    fn value(&self, x: &SVector<f64, N>, p: &SVector<f64, M>, t: f64) -> f64;
    /// `∂L/∂x` as a column vector.
    fn dl_dx(&self, x: &SVector<f64, N>, p: &SVector<f64, M>, t: f64) -> SVector<f64, N>;
    /// `∂L/∂p` as a column vector.
    fn dl_dp(&self, x: &SVector<f64, N>, p: &SVector<f64, M>, t: f64) -> SVector<f64, M>;

    /// `(∂L/∂x, ∂L/∂p)` in one call; override when the two share work.
    fn gradients(&self, x: &SVector<f64, N>, p: &SVector<f64, M>, t: f64) -> (SVector<f64, N>, SVector<f64, M>) {
        (self.dl_dx(x, p, t), self.dl_dp(x, p, t))
    }
}

/// Horizon penalty `C(dt)`, defined for `dt > 0`.
pub trait SamplingCost {
    fn cost(&self, dt: f64) -> f64;
    fn derivative(&self, dt: f64) -> f64;
}

/// `C(dt) = 1 / dt`.
#[derive(Debug, Clone, Copy, Default)]
pub struct InverseHorizon;

impl SamplingCost for InverseHorizon {
    fn cost(&self, dt: f64) -> f64 {
        1.0 / dt
    }

    fn derivative(&self, dt: f64) -> f64 {
        -1.0 / (dt * dt)
    }
}

/// `C(dt) = 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoSamplingCost;

impl SamplingCost for NoSamplingCost {
    fn cost(&self, _dt: f64) -> f64 {
        0.0
    }

    fn derivative(&self, _dt: f64) -> f64 {
        0.0
    }
}

/// One instance of the parametric program, starting at `(t0, x0)`.
#[derive(Debug, Clone)]
pub struct PmpcProblem<D, L, C, const N: usize> {
    pub dynamics: D,
    pub running_cost: L,
    pub sampling_cost: C,
    pub x0: SVector<f64, N>,
    pub t0: f64,
}

impl<D, L, C, const N: usize> PmpcProblem<D, L, C, N> {
    pub fn new(dynamics: D, running_cost: L, sampling_cost: C, x0: SVector<f64, N>, t0: f64) -> Self {
        Self {
            dynamics,
            running_cost,
            sampling_cost,
            x0,
            t0,
        }
    }
}

/// Elementwise box on the parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ParamBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::InvalidSolverConfig("parameter box bounds differ in length".into()));
        }
        if lower.iter().zip(&upper).any(|(lo, hi)| lo.partial_cmp(hi).is_none_or(|o| o.is_gt())) {
            return Err(Error::InvalidSolverConfig("parameter box needs lower <= upper".into()));
        }
        Ok(Self { lower, upper })
    }

    pub fn scalar(lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![lower], vec![upper])
    }

    fn clamp<const M: usize>(&self, p: &SVector<f64, M>) -> SVector<f64, M> {
        SVector::from_fn(|i, _| p[i].clamp(self.lower[i], self.upper[i]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Step size on `p`.
    pub gamma1: f64,
    /// Step size on `dt`.
    pub gamma2: f64,
    /// Stop when `‖∂pJ‖ + |∂dtJ| <= epsilon` (projected onto the feasible box).
    pub epsilon: f64,
    pub max_iters: usize,
    /// RK4 step of both the forward and backward passes.
    pub ode_step: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    /// Number of times a cost-increasing step is halved before it is taken anyway.
    pub max_halvings: u32,
    pub param_box: Option<ParamBox>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            gamma1: 0.001,
            gamma2: 0.01,
            epsilon: 1e-3,
            max_iters: 1000,
            ode_step: 1e-3,
            dt_min: 0.05,
            dt_max: 5.0,
            max_halvings: 10,
            param_box: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gamma1", self.gamma1),
            ("gamma2", self.gamma2),
            ("epsilon", self.epsilon),
            ("ode_step", self.ode_step),
            ("dt_min", self.dt_min),
            ("dt_max", self.dt_max),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidSolverConfig(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidSolverConfig("max_iters must be >= 1".into()));
        }
        if self.dt_min >= self.dt_max {
            return Err(Error::InvalidSolverConfig(format!(
                "dt_min ({}) must be < dt_max ({})",
                self.dt_min, self.dt_max
            )));
        }
        Ok(())
    }

    fn check_horizon(&self, dt: f64) -> Result<()> {
        if dt >= self.dt_min && dt <= self.dt_max {
            Ok(())
        } else {
            Err(Error::HorizonOutOfRange {
                dt,
                dt_min: self.dt_min,
                dt_max: self.dt_max,
            })
        }
    }
}

/// Nodes `t0, t0 + h, ..., t0 + dt`; the last step is shortened so the grid
/// lands exactly on `t0 + dt`.
pub fn time_grid(t0: f64, dt: f64, step: f64) -> Vec<f64> {
    let end = t0 + dt;
    let full = (dt / step * (1.0 - 1e-12)).floor() as usize;
    let mut times: Vec<f64> = (0..=full).map(|k| t0 + k as f64 * step).collect();
    // drop a node sitting (numerically) on the endpoint
    if times.len() > 1 && end - times[times.len() - 1] <= 1e-12 * step {
        times.pop();
    }
    times.push(end);
    times
}

/// Forward solution on the RK4 grid plus the integral of the running cost
/// along it.
#[derive(Debug, Clone)]
pub struct StateTrajectory<const N: usize> {
    pub times: Vec<f64>,
    pub states: Vec<SVector<f64, N>>,
    /// `∫ L dt` over the horizon, integrated as an extra RK4 state.
    pub running_integral: f64,
}

impl<const N: usize> StateTrajectory<N> {
    pub fn final_state(&self) -> &SVector<f64, N> {
        self.states.last().expect("trajectory has at least one node")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory has at least one node")
    }
}

#[derive(Debug, Clone)]
pub struct AdjointTrajectories<const N: usize, const M: usize> {
    pub times: Vec<f64>,
    pub states: Vec<SVector<f64, N>>,
    pub lambda: Vec<SVector<f64, N>>,
    pub xi: Vec<SVector<f64, M>>,
}

fn all_finite<const K: usize>(v: &SVector<f64, K>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// RK4 solution of `ẋ = f(x, p, t)` over `[t0, t0 + dt]`.
pub fn integrate_forward<D, L, C, const N: usize, const M: usize>(
    problem: &PmpcProblem<D, L, C, N>,
    p: &SVector<f64, M>,
    dt: f64,
    config: &SolverConfig,
) -> Result<StateTrajectory<N>>
where
    D: ParametricDynamics<N, M>,
    L: RunningCost<N, M>,
{
    config.check_horizon(dt)?;
    let times = time_grid(problem.t0, dt, config.ode_step);
    let dyn_ = &problem.dynamics;
    let cost = &problem.running_cost;

    let mut states = Vec::with_capacity(times.len());
    let mut x = problem.x0;
    let mut q = 0.0;
    if !all_finite(&x) {
        return Err(Error::Divergence { time: problem.t0 });
    }
    states.push(x);
    for w in times.windows(2) {
        let (t, h) = (w[0], w[1] - w[0]);
        let tm = t + 0.5 * h;
        let k1 = dyn_.f(&x, p, t);
        let q1 = cost.value(&x, p, t);
        let x2 = x + k1 * (0.5 * h);
        let k2 = dyn_.f(&x2, p, tm);
        let q2 = cost.value(&x2, p, tm);
        let x3 = x + k2 * (0.5 * h);
        let k3 = dyn_.f(&x3, p, tm);
        let q3 = cost.value(&x3, p, tm);
        let x4 = x + k3 * h;
        let k4 = dyn_.f(&x4, p, w[1]);
        let q4 = cost.value(&x4, p, w[1]);
        x += (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
        q += (q1 + 2.0 * (q2 + q3) + q4) * (h / 6.0);
        if !all_finite(&x) || !q.is_finite() {
            return Err(Error::Divergence { time: w[1] });
        }
        states.push(x);
    }
    Ok(StateTrajectory {
        times,
        states,
        running_integral: q,
    })
}

/// Backward RK4 sweep for the costate `λ` and parameter costate `ξ`.
pub fn integrate_adjoints<D, L, C, const N: usize, const M: usize>(
    problem: &PmpcProblem<D, L, C, N>,
    p: &SVector<f64, M>,
    dt: f64,
    x_traj: &StateTrajectory<N>,
    config: &SolverConfig,
) -> Result<AdjointTrajectories<N, M>>
where
    D: ParametricDynamics<N, M>,
    L: RunningCost<N, M>,
{
    let times = time_grid(problem.t0, dt, config.ode_step);
    check_grid(&times, x_traj)?;

    let nodes = times.len();
    let mut lambda = vec![SVector::<f64, N>::zeros(); nodes];
    let mut xi = vec![SVector::<f64, M>::zeros(); nodes];

    // Linearization at one point; the adjoint RHS is affine in λ, so the two
    // midpoint stages and the shared nodes reuse it.
    let linearize = |x: &SVector<f64, N>, t: f64| {
        let (fx, fp) = problem.dynamics.jacobians(x, p, t);
        let (lx, lp) = problem.running_cost.gradients(x, p, t);
        (fx, fp, lx, lp)
    };
    let rhs = |lin: &(SMatrix<f64, N, N>, SMatrix<f64, N, M>, SVector<f64, N>, SVector<f64, M>),
               lam: &SVector<f64, N>| {
        let (fx, fp, lx, lp) = lin;
        (-(lx + fx.tr_mul(lam)), -(lp + fp.tr_mul(lam)))
    };

    let mut lin_hi = linearize(&x_traj.states[nodes - 1], times[nodes - 1]);
    for k in (0..nodes - 1).rev() {
        let (t_hi, t_lo) = (times[k + 1], times[k]);
        let h = t_hi - t_lo;
        let tm = t_lo + 0.5 * h;
        let x_lo = &x_traj.states[k];
        let x_mid = (x_traj.states[k + 1] + x_lo) * 0.5;
        let lin_mid = linearize(&x_mid, tm);
        let lin_lo = linearize(x_lo, t_lo);
        let lam = lambda[k + 1];

        let (a1, b1) = rhs(&lin_hi, &lam);
        let (a2, b2) = rhs(&lin_mid, &(lam - a1 * (0.5 * h)));
        let (a3, b3) = rhs(&lin_mid, &(lam - a2 * (0.5 * h)));
        let (a4, b4) = rhs(&lin_lo, &(lam - a3 * h));
        lin_hi = lin_lo;

        let lam_lo = lam - (a1 + (a2 + a3) * 2.0 + a4) * (h / 6.0);
        let xi_lo = xi[k + 1] - (b1 + (b2 + b3) * 2.0 + b4) * (h / 6.0);
        if !all_finite(&lam_lo) || !all_finite(&xi_lo) {
            return Err(Error::Divergence { time: t_lo });
        }
        lambda[k] = lam_lo;
        xi[k] = xi_lo;
    }

    Ok(AdjointTrajectories {
        times,
        states: x_traj.states.clone(),
        lambda,
        xi,
    })
}

fn check_grid<const N: usize>(times: &[f64], x_traj: &StateTrajectory<N>) -> Result<()> {
    if x_traj.times.len() != times.len() || x_traj.states.len() != times.len() {
        return Err(Error::GridMismatch(format!(
            "expected {} nodes, trajectory has {} times and {} states",
            times.len(),
            x_traj.times.len(),
            x_traj.states.len()
        )));
    }
    let tol = 1e-9 * (1.0 + times[times.len() - 1].abs());
    if let Some((a, b)) = times
        .iter()
        .zip(&x_traj.times)
        .find(|(a, b)| (*a - *b).abs() > tol)
    {
        return Err(Error::GridMismatch(format!("node {b} does not match expected {a}")));
    }
    Ok(())
}

/// `∂pJ`, read off as `ξ(t0)`.
pub fn grad_p<const N: usize, const M: usize>(adjoints: &AdjointTrajectories<N, M>) -> SVector<f64, M> {
    adjoints.xi[0]
}

/// `∂dtJ = L(x(t0+dt), p, t0+dt) + C'(dt)`.
pub fn grad_dt<D, L, C, const N: usize, const M: usize>(
    problem: &PmpcProblem<D, L, C, N>,
    p: &SVector<f64, M>,
    dt: f64,
    x_traj: &StateTrajectory<N>,
) -> f64
where
    L: RunningCost<N, M>,
    C: SamplingCost,
{
    problem
        .running_cost
        .value(x_traj.final_state(), p, x_traj.final_time())
        + problem.sampling_cost.derivative(dt)
}

pub fn evaluate_cost<D, L, C, const N: usize, const M: usize>(
    problem: &PmpcProblem<D, L, C, N>,
    p: &SVector<f64, M>,
    dt: f64,
    config: &SolverConfig,
) -> Result<f64>
where
    D: ParametricDynamics<N, M>,
    L: RunningCost<N, M>,
    C: SamplingCost,
{
    let traj = integrate_forward(problem, p, dt, config)?;
    Ok(traj.running_integral + problem.sampling_cost.cost(dt))
}

/// Both gradients at one `(p, dt)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gradients<const M: usize> {
    pub p: SVector<f64, M>,
    pub dt: f64,
}

/// Forward pass, backward pass and gradients in one call. Returns the
/// trajectory, the cost `J(p, dt)` and the gradients.
pub fn cost_and_gradients<D, L, C, const N: usize, const M: usize>(
    problem: &PmpcProblem<D, L, C, N>,
    p: &SVector<f64, M>,
    dt: f64,
    config: &SolverConfig,
) -> Result<(StateTrajectory<N>, f64, Gradients<M>)>
where
    D: ParametricDynamics<N, M>,
    L: RunningCost<N, M>,
    C: SamplingCost,
{
    let traj = integrate_forward(problem, p, dt, config)?;
    let cost = traj.running_integral + problem.sampling_cost.cost(dt);
    let adj = integrate_adjoints(problem, p, dt, &traj, config)?;
    let g = Gradients {
        p: grad_p(&adj),
        dt: grad_dt(problem, p, dt, &traj),
    };
    Ok((traj, cost, g))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PmpcSolution<const M: usize> {
    pub p_star: SVector<f64, M>,
    pub dt_star: f64,
    /// Number of accepted gradient steps.
    pub iterations: usize,
    /// Projected `‖∂pJ‖ + |∂dtJ|` at the returned iterate.
    pub final_grad_norm: f64,
    /// `J` at the initial point and after every accepted step.
    pub cost_trace: Vec<f64>,
    pub converged: bool,
}

/// Gradient components that would push an iterate sitting on a bound out of
/// the box are dropped before measuring stationarity.
fn projected_grad_norm<const M: usize>(p: &SVector<f64, M>, dt: f64, g: &Gradients<M>, config: &SolverConfig) -> f64 {
    let p_norm = match &config.param_box {
        Some(b) => p
            .iter()
            .zip(g.p.iter())
            .enumerate()
            .map(|(i, (&pi, &gi))| {
                let blocked = (pi <= b.lower[i] && gi > 0.0) || (pi >= b.upper[i] && gi < 0.0);
                if blocked {
                    0.0
                } else {
                    gi * gi
                }
            })
            .sum::<f64>()
            .sqrt(),
        None => g.p.norm(),
    };
    let dt_blocked = (dt <= config.dt_min && g.dt > 0.0) || (dt >= config.dt_max && g.dt < 0.0);
    p_norm + if dt_blocked { 0.0 } else { g.dt.abs() }
}

/// Gradient descent on `(p, dt)` with box clamping and step halving.
///
/// Hitting `max_iters` is not an error: the lowest-cost iterate is returned
/// with `converged = false`.
pub fn solve<D, L, C, const N: usize, const M: usize>(
    problem: &PmpcProblem<D, L, C, N>,
    initial_p: &SVector<f64, M>,
    initial_dt: f64,
    config: &SolverConfig,
) -> Result<PmpcSolution<M>>
where
    D: ParametricDynamics<N, M>,
    L: RunningCost<N, M>,
    C: SamplingCost,
{
    config.validate()?;
    config.check_horizon(initial_dt)?;
    if let Some(b) = &config.param_box {
        if b.lower.len() != M {
            return Err(Error::DimensionMismatch(format!(
                "parameter box has {} entries, p has {M}",
                b.lower.len()
            )));
        }
    }

    let clamp_p = |p: &SVector<f64, M>| match &config.param_box {
        Some(b) => b.clamp(p),
        None => *p,
    };
    let clamp_dt = |dt: f64| dt.clamp(config.dt_min, config.dt_max);

    let mut p = clamp_p(initial_p);
    let mut dt = initial_dt;
    let mut traj = integrate_forward(problem, &p, dt, config)?;
    let mut cost = traj.running_integral + problem.sampling_cost.cost(dt);
    let mut cost_trace = vec![cost];

    // (p, dt, cost, projected gradient norm) of the cheapest iterate so far
    let mut best: Option<(SVector<f64, M>, f64, f64, f64)> = None;
    let mut iterations = 0;

    loop {
        let adj = integrate_adjoints(problem, &p, dt, &traj, config)?;
        let g = Gradients {
            p: grad_p(&adj),
            dt: grad_dt(problem, &p, dt, &traj),
        };
        let norm = projected_grad_norm(&p, dt, &g, config);
        if norm <= config.epsilon {
            return Ok(PmpcSolution {
                p_star: p,
                dt_star: dt,
                iterations,
                final_grad_norm: norm,
                cost_trace,
                converged: true,
            });
        }
        if best.as_ref().is_none_or(|b| cost <= b.2) {
            best = Some((p, dt, cost, norm));
        }
        if iterations == config.max_iters {
            break;
        }

        let mut scale = 1.0;
        let mut halvings = 0;
        let (next_p, next_dt, next_traj, next_cost) = loop {
            let trial_p = clamp_p(&(p - g.p * (config.gamma1 * scale)));
            let trial_dt = clamp_dt(dt - config.gamma2 * scale * g.dt);
            let trial = integrate_forward(problem, &trial_p, trial_dt, config)?;
            let trial_cost = trial.running_integral + problem.sampling_cost.cost(trial_dt);
            if trial_cost <= cost || halvings == config.max_halvings {
                break (trial_p, trial_dt, trial, trial_cost);
            }
            scale *= 0.5;
            halvings += 1;
        };
        p = next_p;
        dt = next_dt;
        traj = next_traj;
        cost = next_cost;
        cost_trace.push(cost);
        iterations += 1;
    }

    let (p_star, dt_star, _, final_grad_norm) = best.expect("at least one iterate evaluated");
    Ok(PmpcSolution {
        p_star,
        dt_star,
        iterations,
        final_grad_norm,
        cost_trace,
        converged: false,
    })
}

/// One analytic-vs-finite-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheckEntry {
    /// `p[i]` or `dt`.
    pub name: String,
    pub analytic: f64,
    pub finite_difference: f64,
    pub abs_error: f64,
    pub rel_error: f64,
}

impl GradientCheckEntry {
    pub fn new(name: String, analytic: f64, finite_difference: f64) -> Self {
        let abs_error = (analytic - finite_difference).abs();
        let scale = analytic.abs().max(finite_difference.abs());
        let rel_error = if scale > 0.0 { abs_error / scale } else { 0.0 };
        Self {
            name,
            analytic,
            finite_difference,
            abs_error,
            rel_error,
        }
    }

    /// Within `rel_tol` relative error, or within `abs_floor` absolutely.
    pub fn passes(&self, rel_tol: f64, abs_floor: f64) -> bool {
        self.rel_error <= rel_tol || self.abs_error <= abs_floor
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub entries: Vec<GradientCheckEntry>,
}

impl GradientReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_error).fold(0.0, f64::max)
    }

    pub fn max_abs_error(&self) -> f64 {
        self.entries.iter().map(|e| e.abs_error).fold(0.0, f64::max)
    }

    pub fn passes(&self, rel_tol: f64, abs_floor: f64) -> bool {
        self.entries.iter().all(|e| e.passes(rel_tol, abs_floor))
    }
}

/// Compares the adjoint gradients with central differences of
/// [`evaluate_cost`], using `h = 1e-5 * max(1, |v|)` per coordinate.
pub fn check_gradients<D, L, C, const N: usize, const M: usize>(
    problem: &PmpcProblem<D, L, C, N>,
    p: &SVector<f64, M>,
    dt: f64,
    config: &SolverConfig,
) -> Result<GradientReport>
where
    D: ParametricDynamics<N, M>,
    L: RunningCost<N, M>,
    C: SamplingCost,
{
    let (_, _, g) = cost_and_gradients(problem, p, dt, config)?;
    // the dt perturbation may step just outside the configured clamp
    let widened = SolverConfig {
        dt_min: config.dt_min * 0.5,
        dt_max: config.dt_max * 2.0,
        ..config.clone()
    };
    let mut entries = Vec::with_capacity(M + 1);
    for i in 0..M {
        let h = 1e-5 * p[i].abs().max(1.0);
        let mut hi = *p;
        let mut lo = *p;
        hi[i] += h;
        lo[i] -= h;
        let fd = (evaluate_cost(problem, &hi, dt, &widened)? - evaluate_cost(problem, &lo, dt, &widened)?) / (2.0 * h);
        entries.push(GradientCheckEntry::new(format!("p[{i}]"), g.p[i], fd));
    }
    let h = 1e-5 * dt.abs().max(1.0);
    let fd = (evaluate_cost(problem, p, dt + h, &widened)? - evaluate_cost(problem, p, dt - h, &widened)?) / (2.0 * h);
    entries.push(GradientCheckEntry::new("dt".into(), g.dt, fd));
    Ok(GradientReport { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy::{self, ConstantState, ExponentialGrowth, ZeroCost};
    use approx::assert_relative_eq;
    use nalgebra::Vector1;

    fn v(x: f64) -> Vector1<f64> {
        Vector1::new(x)
    }

    #[test]
    fn grid_lands_on_endpoint() {
        let g = time_grid(0.0, 1.0, 0.3);
        assert_eq!(g.len(), 5);
        assert_eq!(*g.last().unwrap(), 1.0);
        let g = time_grid(2.0, 1.0, 0.25);
        assert_eq!(g, vec![2.0, 2.25, 2.5, 2.75, 3.0]);
        let g = time_grid(0.0, 0.1, 1e-3);
        assert_eq!(g.len(), 101);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn zero_dynamics_keep_state() {
        let prob = PmpcProblem::new(ConstantState, ZeroCost, NoSamplingCost, v(0.7), 0.0);
        let traj = integrate_forward(&prob, &v(0.0), 1.3, &SolverConfig::default()).unwrap();
        assert!(traj.states.iter().all(|x| x[0] == 0.7));
    }

    #[test]
    fn exponential_forward_matches_closed_form() {
        let traj = integrate_forward(&toy::exponential_problem(1.0), &v(1.0), 1.0, &SolverConfig::default()).unwrap();
        assert!((traj.final_state()[0] - std::f64::consts::E).abs() < 1e-8);
        assert_eq!(traj.final_time(), 1.0);
    }

    #[test]
    fn horizon_outside_clamp_is_rejected() {
        let cfg = SolverConfig::default();
        let prob = toy::exponential_problem(1.0);
        assert!(matches!(
            integrate_forward(&prob, &v(1.0), 10.0, &cfg),
            Err(Error::HorizonOutOfRange { .. })
        ));
        assert!(solve(&prob, &v(1.0), 0.01, &cfg).is_err());
    }

    #[test]
    fn divergence_reports_time() {
        let prob = PmpcProblem::new(ExponentialGrowth, ZeroCost, NoSamplingCost, v(1.0), 0.0);
        let cfg = SolverConfig {
            ode_step: 0.1,
            ..SolverConfig::default()
        };
        match integrate_forward(&prob, &v(800.0), 5.0, &cfg) {
            Err(Error::Divergence { time }) => assert!(time > 0.0 && time <= 5.0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn param_box_dimension_is_checked() {
        let cfg = SolverConfig {
            param_box: Some(ParamBox::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap()),
            ..SolverConfig::default()
        };
        assert!(matches!(
            solve(&toy::exponential_problem(1.0), &v(0.1), 1.0, &cfg),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn adjoints_vanish_without_cost() {
        let prob = PmpcProblem::new(ExponentialGrowth, ZeroCost, NoSamplingCost, v(1.0), 0.0);
        let cfg = SolverConfig::default();
        let traj = integrate_forward(&prob, &v(0.5), 1.0, &cfg).unwrap();
        let adj = integrate_adjoints(&prob, &v(0.5), 1.0, &traj, &cfg).unwrap();
        assert!(adj.lambda.iter().all(|l| l[0] == 0.0));
        assert!(adj.xi.iter().all(|x| x[0] == 0.0));
        assert_eq!(grad_p(&adj)[0], 0.0);
    }

    #[test]
    fn param_costate_vanishes_without_param_dependence() {
        // ∂pf = 0 and ∂pL = 0 but λ is non-trivial
        let prob = toy::free_horizon_problem(2.0);
        let cfg = SolverConfig::default();
        let traj = integrate_forward(&prob, &v(0.3), 1.5, &cfg).unwrap();
        let adj = integrate_adjoints(&prob, &v(0.3), 1.5, &traj, &cfg).unwrap();
        assert!(adj.lambda[0][0] > 0.0);
        assert!(adj.xi.iter().all(|x| x[0] == 0.0));
    }

    #[test]
    fn adjoint_terminal_conditions_are_exact() {
        let cfg = SolverConfig::default();
        let prob = toy::exponential_problem(1.0);
        let traj = integrate_forward(&prob, &v(0.3), 0.8, &cfg).unwrap();
        let adj = integrate_adjoints(&prob, &v(0.3), 0.8, &traj, &cfg).unwrap();
        assert_eq!(adj.lambda.last().unwrap()[0], 0.0);
        assert_eq!(adj.xi.last().unwrap()[0], 0.0);
        assert!(adj.lambda[0][0] > 0.0);
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let cfg = SolverConfig::default();
        let prob = toy::exponential_problem(1.0);
        let traj = integrate_forward(&prob, &v(0.3), 0.8, &cfg).unwrap();
        assert!(matches!(
            integrate_adjoints(&prob, &v(0.3), 0.9, &traj, &cfg),
            Err(Error::GridMismatch(_))
        ));
        let shifted = PmpcProblem { t0: 0.5, ..prob };
        assert!(matches!(
            integrate_adjoints(&shifted, &v(0.3), 0.8, &traj, &cfg),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn costate_satisfies_its_ode() {
        // λ̇ = -2x - pλ checked by differencing the stored costate
        let cfg = SolverConfig::default();
        let prob = toy::exponential_problem(1.0);
        let p = 0.4;
        let traj = integrate_forward(&prob, &v(p), 1.0, &cfg).unwrap();
        let adj = integrate_adjoints(&prob, &v(p), 1.0, &traj, &cfg).unwrap();
        for k in [100, 400, 800] {
            let h = adj.times[k + 1] - adj.times[k - 1];
            let lam_dot = (adj.lambda[k + 1][0] - adj.lambda[k - 1][0]) / h;
            let expected = -2.0 * adj.states[k][0] - p * adj.lambda[k][0];
            assert_relative_eq!(lam_dot, expected, max_relative = 1e-5);
        }
    }

    #[test]
    fn sampling_costs() {
        assert_eq!(InverseHorizon.cost(0.5), 2.0);
        assert_eq!(InverseHorizon.derivative(0.5), -4.0);
        assert_eq!(NoSamplingCost.cost(0.5), 0.0);
        assert_eq!(NoSamplingCost.derivative(0.5), 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        let bad = SolverConfig {
            dt_min: 2.0,
            dt_max: 1.0,
            ..SolverConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SolverConfig {
            gamma1: 0.0,
            ..SolverConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(ParamBox::scalar(1.0, 0.0).is_err());
        assert!(ParamBox::new(vec![0.0], vec![]).is_err());
    }

    #[test]
    fn stationary_start_returns_immediately() {
        let prob = toy::free_horizon_problem(1.0);
        let sol = solve(&prob, &v(0.0), 1.0, &SolverConfig::default()).unwrap();
        assert!(sol.converged);
        assert_eq!(sol.iterations, 0);
        assert_eq!(sol.cost_trace.len(), 1);
        assert_relative_eq!(sol.cost_trace[0], 2.0, max_relative = 1e-12);
    }

    #[test]
    fn box_clamp_is_respected() {
        // L = x² with ẋ = p x: the cost decreases with p, so p runs into the lower bound
        let prob = toy::exponential_problem(1.0);
        let cfg = SolverConfig {
            gamma1: 0.5,
            max_iters: 200,
            param_box: Some(ParamBox::scalar(-0.5, 0.5).unwrap()),
            ..SolverConfig::default()
        };
        let sol = solve(&prob, &v(0.2), 1.0, &cfg).unwrap();
        assert_eq!(sol.p_star[0], -0.5);
        assert!(sol.converged);
        assert_eq!(sol.dt_star, cfg.dt_min);
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let prob = toy::free_horizon_problem(1.0);
        let cfg = SolverConfig {
            max_iters: 3,
            ..SolverConfig::default()
        };
        let sol = solve(&prob, &v(0.0), 3.0, &cfg).unwrap();
        assert!(!sol.converged);
        assert_eq!(sol.iterations, 3);
        assert_eq!(sol.cost_trace.len(), 4);
        assert!(sol.cost_trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(sol.final_grad_norm > cfg.epsilon);
    }

    #[test]
    fn step_halving_prevents_cost_increase() {
        // γ2 = 5 overshoots the horizon optimum dt = 1 by far without halving
        let prob = toy::free_horizon_problem(1.0);
        let cfg = SolverConfig {
            gamma2: 5.0,
            max_iters: 50,
            ..SolverConfig::default()
        };
        let sol = solve(&prob, &v(0.0), 0.5, &cfg).unwrap();
        assert!(sol.cost_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        let no_halving = SolverConfig { max_halvings: 0, ..cfg };
        let raw = solve(&prob, &v(0.0), 0.5, &no_halving).unwrap();
        assert!(raw.cost_trace.windows(2).any(|w| w[1] > w[0]));
    }
}
