//! Small scalar problems with closed-form costs, used to exercise and
//! self-check the PMPC solver.

use nalgebra::{Matrix1, SMatrix, SVector, Vector1};

use crate::pmpc::{InverseHorizon, NoSamplingCost, ParametricDynamics, PmpcProblem, RunningCost};

/// `ẋ = 0`, one state, one (inert) parameter.
#[derive(Debug, Clone, Copy, Default)]
pub struct ConstantState;

impl ParametricDynamics<1, 1> for ConstantState {
    fn f(&self, _x: &Vector1<f64>, _p: &Vector1<f64>, _t: f64) -> Vector1<f64> {
        Vector1::zeros()
    }
    fn df_dx(&self, _x: &Vector1<f64>, _p: &Vector1<f64>, _t: f64) -> Matrix1<f64> {
        Matrix1::zeros()
    }
    fn df_dp(&self, _x: &Vector1<f64>, _p: &Vector1<f64>, _t: f64) -> Matrix1<f64> {
        Matrix1::zeros()
    }
}

/// `ẋ = p x`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExponentialGrowth;

impl ParametricDynamics<1, 1> for ExponentialGrowth {
    fn f(&self, x: &Vector1<f64>, p: &Vector1<f64>, _t: f64) -> Vector1<f64> {
        Vector1::new(p[0] * x[0])
    }
    fn df_dx(&self, _x: &Vector1<f64>, p: &Vector1<f64>, _t: f64) -> Matrix1<f64> {
        Matrix1::new(p[0])
    }
    fn df_dp(&self, x: &Vector1<f64>, _p: &Vector1<f64>, _t: f64) -> Matrix1<f64> {
        Matrix1::new(x[0])
    }
}

/// `ẋ = p`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LinearDrift;

impl ParametricDynamics<1, 1> for LinearDrift {
    fn f(&self, _x: &Vector1<f64>, p: &Vector1<f64>, _t: f64) -> Vector1<f64> {
        Vector1::new(p[0])
    }
    fn df_dx(&self, _x: &Vector1<f64>, _p: &Vector1<f64>, _t: f64) -> Matrix1<f64> {
        Matrix1::zeros()
    }
    fn df_dp(&self, _x: &Vector1<f64>, _p: &Vector1<f64>, _t: f64) -> Matrix1<f64> {
        Matrix1::new(1.0)
    }
}

/// `L = x²`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SquaredState;

impl RunningCost<1, 1> for SquaredState {
    fn value(&self, x: &Vector1<f64>, _p: &Vector1<f64>, _t: f64) -> f64 {
        x[0] * x[0]
    }
    fn dl_dx(&self, x: &Vector1<f64>, _p: &Vector1<f64>, _t: f64) -> Vector1<f64> {
        Vector1::new(2.0 * x[0])
    }
    fn dl_dp(&self, _x: &Vector1<f64>, _p: &Vector1<f64>, _t: f64) -> Vector1<f64> {
        Vector1::zeros()
    }
}

/// `L = 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroCost;

impl RunningCost<1, 1> for ZeroCost {
    fn value(&self, _x: &Vector1<f64>, _p: &Vector1<f64>, _t: f64) -> f64 {
        0.0
    }
    fn dl_dx(&self, _x: &Vector1<f64>, _p: &Vector1<f64>, _t: f64) -> Vector1<f64> {
        Vector1::zeros()
    }
    fn dl_dp(&self, _x: &Vector1<f64>, _p: &Vector1<f64>, _t: f64) -> Vector1<f64> {
        Vector1::zeros()
    }
}

/// Wraps a dynamics model and multiplies its `∂f/∂p` by a constant. Used as
/// a negative control for the gradient self-check.
#[derive(Debug, Clone, Copy)]
pub struct ScaledParamJacobian<D> {
    pub inner: D,
    pub factor: f64,
}

impl<D: ParametricDynamics<N, M>, const N: usize, const M: usize> ParametricDynamics<N, M> for ScaledParamJacobian<D> {
    fn f(&self, x: &SVector<f64, N>, p: &SVector<f64, M>, t: f64) -> SVector<f64, N> {
        self.inner.f(x, p, t)
    }
    fn df_dx(&self, x: &SVector<f64, N>, p: &SVector<f64, M>, t: f64) -> SMatrix<f64, N, N> {
        self.inner.df_dx(x, p, t)
    }
    fn df_dp(&self, x: &SVector<f64, N>, p: &SVector<f64, M>, t: f64) -> SMatrix<f64, N, M> {
        self.inner.df_dp(x, p, t) * self.factor
    }
}

/// `ẋ = p x`, `L = x²`, no horizon penalty.
pub fn exponential_problem(x0: f64) -> PmpcProblem<ExponentialGrowth, SquaredState, NoSamplingCost, 1> {
    PmpcProblem {
        dynamics: ExponentialGrowth,
        running_cost: SquaredState,
        sampling_cost: NoSamplingCost,
        x0: Vector1::new(x0),
        t0: 0.0,
    }
}

/// `ẋ = p`, `L = x²`: the state is linear in time, so RK4 and the linear
/// interpolation of the backward pass are exact.
pub fn quadratic_problem(x0: f64) -> PmpcProblem<LinearDrift, SquaredState, NoSamplingCost, 1> {
    PmpcProblem {
        dynamics: LinearDrift,
        running_cost: SquaredState,
        sampling_cost: NoSamplingCost,
        x0: Vector1::new(x0),
        t0: 0.0,
    }
}

/// `ẋ = 0`, `L = x²`, `C = 1/dt`; the horizon optimum is `dt = 1/|x0|`.
pub fn free_horizon_problem(x0: f64) -> PmpcProblem<ConstantState, SquaredState, InverseHorizon, 1> {
    PmpcProblem {
        dynamics: ConstantState,
        running_cost: SquaredState,
        sampling_cost: InverseHorizon,
        x0: Vector1::new(x0),
        t0: 0.0,
    }
}

/// Closed form of `∫_0^dt x² ds` for `ẋ = p x`.
pub fn exponential_cost(x0: f64, p: f64, dt: f64) -> f64 {
    if p == 0.0 {
        x0 * x0 * dt
    } else {
        x0 * x0 * ((2.0 * p * dt).exp() - 1.0) / (2.0 * p)
    }
}

/// `d/dp` of [`exponential_cost`].
pub fn exponential_cost_dp(x0: f64, p: f64, dt: f64) -> f64 {
    let e = (2.0 * p * dt).exp();
    x0 * x0 * (dt * e / p - (e - 1.0) / (2.0 * p * p))
}
