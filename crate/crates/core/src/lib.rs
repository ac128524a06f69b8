//! Near-identity diffeomorphism (NID) abstraction from single integrators to
//! differential-drive robots, and a variable-horizon parametric MPC solver
//! that re-selects the NID offset online.
//!
//! - [`kinematics`]: unicycle / differential-drive models, the NID and its
//!   input map, and the closed-form precision/maneuverability costs.
//! - [`pmpc`]: generic gradient-based PMPC with adjoint gradients in the
//!   parameters and the horizon length.
//! - [`experiment`]: the ellipse-tracking study comparing PMPC against the
//!   static optimal offset.
//! - [`toy`]: scalar problems with closed-form costs.

pub mod error;
pub mod experiment;
pub mod kinematics;
pub mod pmpc;
pub mod toy;

pub use error::{Error, Result};
pub use experiment::{
    build_pmpc_problem, compute_metrics, pmpc_running_cost, reference, run_experiment, run_pmpc_experiment,
    run_static_experiment, si_controller, ClosedLoop, EllipseReference, ExperimentConfig, LogRow, Metrics, Mode,
    RunOutcome, RunningCostEval, SolverFailure, TrackingProblem, TrajectoryLog,
};
pub use kinematics::{
    forward_sum_bound, nid_forward, rl_matrix, si_to_unicycle, static_cost, static_optimal_l, unicycle_derivative,
    unicycle_to_wheels, wheel_diff_bound, wheels_to_unicycle, NidParam, Pose, PoseRate, RobotGeometry, SiPoint,
    SiVelocity, UnicycleInput, WheelSpeeds,
};
pub use pmpc::{
    check_gradients, cost_and_gradients, evaluate_cost, grad_dt, grad_p, integrate_adjoints, integrate_forward,
    solve, AdjointTrajectories, GradientCheckEntry, GradientReport, Gradients, InverseHorizon, NoSamplingCost,
    ParamBox, ParametricDynamics, PmpcProblem, PmpcSolution, RunningCost, SamplingCost, SolverConfig,
    StateTrajectory,
};
