//! Unicycle and differential-drive kinematics, the near-identity
//! diffeomorphism (NID) onto a single-integrator point, and the closed-form
//! precision/maneuverability costs used to pick the NID offset.
//!
//! Every function here is pure. Angles are radians and are never wrapped.

use nalgebra::Matrix2;

use crate::error::{Error, Result};

/// Unicycle pose: planar position of the wheel-axis midpoint and heading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub x1: f64,
    pub x2: f64,
    pub theta: f64,
}

impl Pose {
    pub const fn new(x1: f64, x2: f64, theta: f64) -> Self {
        Self { x1, x2, theta }
    }

    /// Planar position (x1, x2).
    pub fn position(&self) -> SiPoint {
        SiPoint::new(self.x1, self.x2)
    }

    pub fn is_finite(&self) -> bool {
        self.x1.is_finite() && self.x2.is_finite() && self.theta.is_finite()
    }
}

/// A point of the single-integrator abstraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiPoint {
    pub p1: f64,
    pub p2: f64,
}

impl SiPoint {
    pub const fn new(p1: f64, p2: f64) -> Self {
        Self { p1, p2 }
    }

    pub fn distance(&self, other: &SiPoint) -> f64 {
        (self.p1 - other.p1).hypot(self.p2 - other.p2)
    }
}

/// Velocity command for the single-integrator point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiVelocity {
    pub v1: f64,
    pub v2: f64,
}

impl SiVelocity {
    pub const fn new(v1: f64, v2: f64) -> Self {
        Self { v1, v2 }
    }

    pub fn norm(&self) -> f64 {
        self.v1.hypot(self.v2)
    }

    /// Scales the vector down so its norm does not exceed `max_norm`.
    pub fn clamp_norm(self, max_norm: f64) -> Self {
        let n = self.norm();
        if n > max_norm {
            let s = max_norm / n;
            Self::new(self.v1 * s, self.v2 * s)
        } else {
            self
        }
    }
}

/// Linear and angular velocity of the unicycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnicycleInput {
    pub v: f64,
    pub omega: f64,
}

impl UnicycleInput {
    pub const fn new(v: f64, omega: f64) -> Self {
        Self { v, omega }
    }
}

/// Right and left wheel angular velocities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WheelSpeeds {
    pub omega_r: f64,
    pub omega_l: f64,
}

impl WheelSpeeds {
    pub const fn new(omega_r: f64, omega_l: f64) -> Self {
        Self { omega_r, omega_l }
    }
}

/// Time derivative of a [`Pose`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseRate {
    pub x1: f64,
    pub x2: f64,
    pub theta: f64,
}

/// Physical parameters of a differential-drive robot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotGeometry {
    /// Wheel radius (m).
    r_w: f64,
    /// Distance between the wheels (m).
    l_w: f64,
    /// Bound on the single-integrator input magnitude (m/s).
    v_bar: f64,
}

impl RobotGeometry {
    /// GRITSbot geometry used on the Robotarium.
    pub const ROBOTARIUM: RobotGeometry = RobotGeometry {
        r_w: 0.005,
        l_w: 0.03,
        v_bar: 0.1,
    };

    pub fn new(r_w: f64, l_w: f64, v_bar: f64) -> Result<Self> {
        for (name, value) in [("r_w", r_w), ("l_w", l_w), ("v_bar", v_bar)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidGeometry { field: name, value });
            }
        }
        Ok(Self { r_w, l_w, v_bar })
    }

    pub fn r_w(&self) -> f64 {
        self.r_w
    }

    pub fn l_w(&self) -> f64 {
        self.l_w
    }

    pub fn v_bar(&self) -> f64 {
        self.v_bar
    }

    /// `l_w * v_bar / r_w`, the numerator shared by the maneuverability formulas.
    fn maneuver_scale(&self) -> f64 {
        self.l_w * self.v_bar / self.r_w
    }
}

impl Default for RobotGeometry {
    fn default() -> Self {
        Self::ROBOTARIUM
    }
}

/// Look-ahead distance of the NID; always strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct NidParam(f64);

impl NidParam {
    pub fn new(l: f64) -> Result<Self> {
        if l.is_finite() && l > 0.0 {
            Ok(Self(l))
        } else {
            Err(Error::InvalidNidParam(l))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for NidParam {
    type Error = Error;

    fn try_from(l: f64) -> Result<Self> {
        Self::new(l)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::WeightOutOfRange {
            name: "alpha",
            value: alpha,
        })
    }
}

/// Virtual single-integrator point a distance `l` ahead of the unicycle.
pub fn nid_forward(pose: &Pose, l: NidParam) -> SiPoint {
    let (s, c) = pose.theta.sin_cos();
    SiPoint::new(pose.x1 + l.0 * c, pose.x2 + l.0 * s)
}

/// `R_l(theta)`, mapping unicycle inputs (v, omega) to the velocity of the
/// virtual point. Its determinant is `l`.
pub fn rl_matrix(theta: f64, l: NidParam) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(c, -l.0 * s, s, l.0 * c)
}

/// Unicycle command realizing the single-integrator velocity `u_si`,
/// i.e. `R_l(theta)^-1 u_si` in closed form.
pub fn si_to_unicycle(u_si: &SiVelocity, theta: f64, l: NidParam) -> UnicycleInput {
    let (s, c) = theta.sin_cos();
    UnicycleInput::new(
        c * u_si.v1 + s * u_si.v2,
        (-s * u_si.v1 + c * u_si.v2) / l.0,
    )
}

pub fn unicycle_to_wheels(u: &UnicycleInput, geom: &RobotGeometry) -> WheelSpeeds {
    let sum = 2.0 * u.v / geom.r_w;
    let diff = geom.l_w * u.omega / geom.r_w;
    WheelSpeeds::new(0.5 * (sum + diff), 0.5 * (sum - diff))
}

pub fn wheels_to_unicycle(w: &WheelSpeeds, geom: &RobotGeometry) -> UnicycleInput {
    UnicycleInput::new(
        0.5 * geom.r_w * (w.omega_r + w.omega_l),
        geom.r_w / geom.l_w * (w.omega_r - w.omega_l),
    )
}

/// Unicycle vector field.
pub fn unicycle_derivative(pose: &Pose, u: &UnicycleInput) -> PoseRate {
    let (s, c) = pose.theta.sin_cos();
    PoseRate {
        x1: u.v * c,
        x2: u.v * s,
        theta: u.omega,
    }
}

/// Upper bound on `|omega_r - omega_l|` when `|u_si| <= v_bar`.
pub fn wheel_diff_bound(geom: &RobotGeometry, l: NidParam) -> f64 {
    geom.maneuver_scale() / l.0
}

/// Upper bound on `|omega_r + omega_l|` when `|u_si| <= v_bar`. Does not
/// depend on the NID offset.
pub fn forward_sum_bound(geom: &RobotGeometry) -> f64 {
    2.0 * geom.v_bar / geom.r_w
}

/// Convex blend of the precision cost (`l`) and the maneuverability cost
/// (the wheel-difference bound).
pub fn static_cost(l: NidParam, alpha: f64, geom: &RobotGeometry) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(alpha * l.0 + (1.0 - alpha) * wheel_diff_bound(geom, l))
}

/// Minimizer of [`static_cost`] over `l > 0`.
pub fn static_optimal_l(alpha: f64, geom: &RobotGeometry) -> Result<NidParam> {
    check_alpha(alpha)?;
    NidParam::new(((1.0 - alpha) / alpha * geom.maneuver_scale()).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, FRAC_PI_4, FRAC_PI_6};

    fn l(v: f64) -> NidParam {
        NidParam::new(v).unwrap()
    }

    #[test]
    fn nid_forward_examples() {
        let p = nid_forward(&Pose::new(0.0, 0.0, 0.0), l(0.1));
        assert_eq!(p, SiPoint::new(0.1, 0.0));

        let p = nid_forward(&Pose::new(1.0, 2.0, FRAC_PI_2), l(0.5));
        assert_relative_eq!(p.p1, 1.0, epsilon = 1e-15);
        assert_relative_eq!(p.p2, 2.5, epsilon = 1e-15);

        let p = nid_forward(&Pose::new(0.3, -0.2, FRAC_PI_4), l(0.078));
        let half_sqrt2 = 0.5f64.sqrt();
        assert_relative_eq!(p.p1, 0.3 + 0.078 * half_sqrt2, epsilon = 1e-15);
        assert_relative_eq!(p.p2, -0.2 + 0.078 * half_sqrt2, epsilon = 1e-15);
    }

    #[test]
    fn nid_param_rejects_non_positive() {
        assert!(matches!(NidParam::new(0.0), Err(Error::InvalidNidParam(_))));
        assert!(NidParam::new(-0.1).is_err());
        assert!(NidParam::new(f64::NAN).is_err());
        assert!(NidParam::try_from(f64::INFINITY).is_err());
    }

    #[test]
    fn geometry_rejects_non_positive() {
        assert!(RobotGeometry::new(0.0, 0.03, 0.1).is_err());
        assert!(RobotGeometry::new(0.005, -1.0, 0.1).is_err());
        assert!(RobotGeometry::new(0.005, 0.03, f64::NAN).is_err());
        assert_eq!(
            RobotGeometry::new(0.005, 0.03, 0.1).unwrap(),
            RobotGeometry::ROBOTARIUM
        );
    }

    #[test]
    fn rl_matrix_examples() {
        assert_eq!(rl_matrix(0.0, l(1.0)), Matrix2::identity());
        assert_eq!(rl_matrix(0.0, l(0.1)), Matrix2::new(1.0, 0.0, 0.0, 0.1));
        let m = rl_matrix(FRAC_PI_3, l(0.078));
        let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
        assert_relative_eq!(det, 0.078, max_relative = 1e-14);
    }

    #[test]
    fn si_to_unicycle_examples() {
        let u = si_to_unicycle(&SiVelocity::new(1.0, 0.0), 0.0, l(0.1));
        assert_eq!(u, UnicycleInput::new(1.0, 0.0));
        let u = si_to_unicycle(&SiVelocity::new(0.0, 1.0), 0.0, l(0.1));
        assert_relative_eq!(u.v, 0.0);
        assert_relative_eq!(u.omega, 10.0, max_relative = 1e-15);

        let u_si = SiVelocity::new(0.05, 0.05);
        let u = si_to_unicycle(&u_si, FRAC_PI_6, l(0.078));
        let back = rl_matrix(FRAC_PI_6, l(0.078)) * nalgebra::Vector2::new(u.v, u.omega);
        assert_relative_eq!(back.x, u_si.v1, epsilon = 1e-15);
        assert_relative_eq!(back.y, u_si.v2, epsilon = 1e-15);
    }

    #[test]
    fn wheel_map_examples() {
        let g = RobotGeometry::ROBOTARIUM;
        assert_eq!(
            unicycle_to_wheels(&UnicycleInput::new(0.0, 0.0), &g),
            WheelSpeeds::new(0.0, 0.0)
        );
        // omega_r + omega_l = 2 * 0.05 / 0.005 = 20, omega_r - omega_l = 0.03 / 0.005 = 6
        let w = unicycle_to_wheels(&UnicycleInput::new(0.05, 1.0), &g);
        assert_relative_eq!(w.omega_r, 13.0, max_relative = 1e-14);
        assert_relative_eq!(w.omega_l, 7.0, max_relative = 1e-14);

        let u = wheels_to_unicycle(&WheelSpeeds::new(13.0, 7.0), &g);
        assert_relative_eq!(u.v, 0.05, max_relative = 1e-14);
        assert_relative_eq!(u.omega, 1.0, max_relative = 1e-14);

        assert_eq!(
            wheels_to_unicycle(&WheelSpeeds::new(0.0, 0.0), &g),
            UnicycleInput::new(0.0, 0.0)
        );
        for a in [-3.0, 0.5, 12.25] {
            assert_eq!(wheels_to_unicycle(&WheelSpeeds::new(a, a), &g).omega, 0.0);
        }
    }

    #[test]
    fn unicycle_derivative_examples() {
        let d = unicycle_derivative(&Pose::new(0.0, 0.0, 0.0), &UnicycleInput::new(1.0, 0.0));
        assert_eq!((d.x1, d.x2, d.theta), (1.0, 0.0, 0.0));

        let d = unicycle_derivative(&Pose::new(0.0, 0.0, FRAC_PI_2), &UnicycleInput::new(1.0, 0.0));
        assert_relative_eq!(d.x1, 0.0, epsilon = 1e-15);
        assert_relative_eq!(d.x2, 1.0);

        let d = unicycle_derivative(
            &Pose::new(0.0, 0.0, FRAC_PI_4),
            &UnicycleInput::new(2f64.sqrt(), 2.0),
        );
        assert_relative_eq!(d.x1, 1.0, max_relative = 1e-15);
        assert_relative_eq!(d.x2, 1.0, max_relative = 1e-15);
        assert_eq!(d.theta, 2.0);
    }

    #[test]
    fn bound_examples() {
        let g = RobotGeometry::ROBOTARIUM;
        assert_relative_eq!(wheel_diff_bound(&g, l(0.078)), 0.6 / 0.078, max_relative = 1e-14);
        assert_relative_eq!(wheel_diff_bound(&g, l(0.078)), 7.6923, epsilon = 1e-4);
        assert_relative_eq!(
            wheel_diff_bound(&g, l(0.2)),
            0.5 * wheel_diff_bound(&g, l(0.1)),
            max_relative = 1e-15
        );
        let cancel = RobotGeometry::new(0.2, 0.2, 0.7).unwrap();
        assert_relative_eq!(wheel_diff_bound(&cancel, l(0.7)), 1.0, max_relative = 1e-15);

        assert_relative_eq!(forward_sum_bound(&g), 40.0, max_relative = 1e-15);
        let half = RobotGeometry::new(0.01, 0.03, 0.005).unwrap();
        assert_relative_eq!(forward_sum_bound(&half), 1.0, max_relative = 1e-15);
    }

    #[test]
    fn static_cost_examples() {
        let g = RobotGeometry::ROBOTARIUM;
        let d = static_cost(l(0.3), 0.5, &g).unwrap();
        assert_relative_eq!(d, 0.5 * (0.3 + 0.6 / 0.3), max_relative = 1e-15);

        let d = static_cost(l(0.078), 0.99, &g).unwrap();
        assert_relative_eq!(d, 0.99 * 0.078 + 0.01 * 0.6 / 0.078, max_relative = 1e-14);
        assert_relative_eq!(d, 0.1541, epsilon = 1e-4);

        for alpha in [0.0, 1.0, -0.2, 1.5, f64::NAN] {
            assert!(matches!(
                static_cost(l(0.1), alpha, &g),
                Err(Error::WeightOutOfRange { name: "alpha", .. })
            ));
            assert!(static_optimal_l(alpha, &g).is_err());
        }
    }

    #[test]
    fn static_optimum_examples() {
        let g = RobotGeometry::ROBOTARIUM;
        let l_star = static_optimal_l(0.99, &g).unwrap().get();
        assert!((l_star - 0.078).abs() < 5e-4, "l* = {l_star}");

        let balanced = RobotGeometry::new(0.1, 0.1, 1.0).unwrap();
        assert_relative_eq!(static_optimal_l(0.5, &balanced).unwrap().get(), 1.0);

        let h = 1e-6;
        let d = |x: f64| static_cost(l(x), 0.99, &g).unwrap();
        let slope = (d(l_star + h) - d(l_star - h)) / (2.0 * h);
        assert!(slope.abs() < 1e-9, "slope {slope}");
    }

    #[test]
    fn static_optimum_beats_grid() {
        let g = RobotGeometry::ROBOTARIUM;
        let l_star = static_optimal_l(0.99, &g).unwrap();
        let best = static_cost(l_star, 0.99, &g).unwrap();
        for i in 0..1000 {
            let x = 1e-3 + (1.0 - 1e-3) * i as f64 / 999.0;
            assert!(static_cost(l(x), 0.99, &g).unwrap() >= best);
        }
    }
}
