//! Flat `key = value` configuration files.
//!
//! Blank lines and everything after `#` are ignored. Every key is optional;
//! missing keys keep the defaults of [`ExperimentConfig::default`], except
//! `duration`, which defaults to one orbit of the configured reference.

use std::collections::HashSet;
use std::path::Path;

use nid_pmpc::{ExperimentConfig, Pose, RobotGeometry};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },

    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },

    #[error("line {line}: key `{key}` given twice")]
    Duplicate { line: usize, key: String },

    #[error("line {line}: `{key}` expects {expected}, got `{value}`")]
    BadValue {
        line: usize,
        key: String,
        value: String,
        expected: &'static str,
    },

    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Every accepted key with a short description, in file order.
pub const KEYS: &[(&str, &str)] = &[
    ("r_w", "wheel radius [m]"),
    ("l_w", "base length [m]"),
    ("v_bar", "single-integrator speed bound [m/s]"),
    ("beta", "weight of l² in the PMPC running cost, in (0, 1)"),
    ("alpha", "precision weight of the static selection, in (0, 1)"),
    ("control_period", "control period [s]"),
    ("duration", "simulated time [s]; defaults to one orbit"),
    ("a1", "reference semi-axis along x1 [m]"),
    ("a2", "reference semi-axis along x2 [m]"),
    ("rate", "reference angular rate [rad/s]"),
    ("initial_x1", "initial position x1 [m]"),
    ("initial_x2", "initial position x2 [m]"),
    ("initial_theta", "initial heading [rad]"),
    ("initial_l", "initial NID offset for PMPC [m]"),
    ("initial_dt", "initial PMPC horizon [s]"),
    ("l_min", "lower bound on l [m]"),
    ("l_max", "upper bound on l [m]"),
    ("warm_start_steps", "gradient steps per control period"),
    ("initial_solve_iters", "iteration cap of the solve at t = 0"),
    ("saturate", "clamp the single-integrator speed to v_bar (true/false)"),
    ("gamma1", "step size on l"),
    ("gamma2", "step size on the horizon"),
    ("epsilon", "stopping tolerance on the gradient norm"),
    ("max_iters", "iteration cap of a cold solve"),
    ("ode_step", "RK4 step of the PMPC passes [s]"),
    ("dt_min", "shortest horizon [s]"),
    ("dt_max", "longest horizon [s]"),
    ("max_halvings", "step halvings before a cost-increasing step is taken"),
];

fn parse_f64(line: usize, key: &str, value: &str) -> Result<f64, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        line,
        key: key.into(),
        value: value.into(),
        expected: "a number",
    })
}

fn parse_count<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        line,
        key: key.into(),
        value: value.into(),
        expected: "a non-negative integer",
    })
}

fn parse_bool(line: usize, key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(ConfigError::BadValue {
            line,
            key: key.into(),
            value: value.into(),
            expected: "`true` or `false`",
        }),
    }
}

/// Parses and validates a configuration file body.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = ExperimentConfig::default();
    let defaults = RobotGeometry::default();
    let (mut r_w, mut l_w, mut v_bar) = (defaults.r_w(), defaults.l_w(), defaults.v_bar());
    let (mut x1, mut x2, mut theta) = (cfg.initial_pose.x1, cfg.initial_pose.x2, cfg.initial_pose.theta);
    let mut duration = None;
    let mut seen = HashSet::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, value) = body.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line,
            text: raw.trim().into(),
        })?;
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.iter().any(|(k, _)| *k == key) {
            return Err(ConfigError::UnknownKey { line, key: key.into() });
        }
        if !seen.insert(key.to_string()) {
            return Err(ConfigError::Duplicate { line, key: key.into() });
        }
        let num = || parse_f64(line, key, value);
        match key {
            "r_w" => r_w = num()?,
            "l_w" => l_w = num()?,
            "v_bar" => v_bar = num()?,
            "beta" => cfg.beta = num()?,
            "alpha" => cfg.alpha = num()?,
            "control_period" => cfg.control_period = num()?,
            "duration" => duration = Some(num()?),
            "a1" => cfg.reference.a1 = num()?,
            "a2" => cfg.reference.a2 = num()?,
            "rate" => cfg.reference.rate = num()?,
            "initial_x1" => x1 = num()?,
            "initial_x2" => x2 = num()?,
            "initial_theta" => theta = num()?,
            "initial_l" => cfg.initial_l = num()?,
            "initial_dt" => cfg.initial_dt = num()?,
            "l_min" => cfg.l_min = num()?,
            "l_max" => cfg.l_max = num()?,
            "warm_start_steps" => cfg.warm_start_steps = parse_count(line, key, value)?,
            "initial_solve_iters" => cfg.initial_solve_iters = parse_count(line, key, value)?,
            "saturate" => cfg.saturate = parse_bool(line, key, value)?,
            "gamma1" => cfg.solver.gamma1 = num()?,
            "gamma2" => cfg.solver.gamma2 = num()?,
            "epsilon" => cfg.solver.epsilon = num()?,
            "max_iters" => cfg.solver.max_iters = parse_count(line, key, value)?,
            "ode_step" => cfg.solver.ode_step = num()?,
            "dt_min" => cfg.solver.dt_min = num()?,
            "dt_max" => cfg.solver.dt_max = num()?,
            "max_halvings" => cfg.solver.max_halvings = parse_count(line, key, value)?,
            _ => unreachable!("key list and match arms agree"),
        }
    }

    cfg.geometry = RobotGeometry::new(r_w, l_w, v_bar).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    cfg.initial_pose = Pose::new(x1, x2, theta);
    cfg.duration = match duration {
        Some(d) => d,
        None if cfg.reference.rate > 0.0 => cfg.reference.period(),
        None => ExperimentConfig::default().duration,
    };
    cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(cfg)
}

/// Reads and parses `path`; `None` gives the defaults.
pub fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, crate::CliError> {
    match path {
        None => Ok(parse_config("")?),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| crate::CliError::Io {
                path: p.to_path_buf(),
                source,
            })?;
            Ok(parse_config(&text)?)
        }
    }
}

/// A config file listing every key at its default value.
pub fn default_config_text() -> String {
    let cfg = ExperimentConfig::default();
    let g = cfg.geometry;
    let values: Vec<String> = vec![
        g.r_w().to_string(),
        g.l_w().to_string(),
        g.v_bar().to_string(),
        cfg.beta.to_string(),
        cfg.alpha.to_string(),
        cfg.control_period.to_string(),
        cfg.duration.to_string(),
        cfg.reference.a1.to_string(),
        cfg.reference.a2.to_string(),
        cfg.reference.rate.to_string(),
        cfg.initial_pose.x1.to_string(),
        cfg.initial_pose.x2.to_string(),
        cfg.initial_pose.theta.to_string(),
        cfg.initial_l.to_string(),
        cfg.initial_dt.to_string(),
        cfg.l_min.to_string(),
        cfg.l_max.to_string(),
        cfg.warm_start_steps.to_string(),
        cfg.initial_solve_iters.to_string(),
        cfg.saturate.to_string(),
        cfg.solver.gamma1.to_string(),
        cfg.solver.gamma2.to_string(),
        cfg.solver.epsilon.to_string(),
        cfg.solver.max_iters.to_string(),
        cfg.solver.ode_step.to_string(),
        cfg.solver.dt_min.to_string(),
        cfg.solver.dt_max.to_string(),
        cfg.solver.max_halvings.to_string(),
    ];
    KEYS.iter()
        .zip(values)
        .map(|((k, doc), v)| format!("# {doc}\n{k} = {v}\n"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(parse_config("").unwrap(), ExperimentConfig::default());
        assert_eq!(parse_config("# nothing\n\n   \n").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn default_text_round_trips() {
        assert_eq!(parse_config(&default_config_text()).unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn values_and_comments() {
        let cfg = parse_config("beta = 0.2   # heavier l penalty\nsaturate=false\nwarm_start_steps = 5\n").unwrap();
        assert_eq!(cfg.beta, 0.2);
        assert!(!cfg.saturate);
        assert_eq!(cfg.warm_start_steps, 5);
    }

    #[test]
    fn duration_follows_rate() {
        let cfg = parse_config("rate = 0.2").unwrap();
        assert!((cfg.duration - 10.0 * std::f64::consts::PI).abs() < 1e-12);
        assert_eq!(parse_config("rate = 0.2\nduration = 3").unwrap().duration, 3.0);
    }

    #[test]
    fn errors_name_the_field() {
        let e = parse_config("beta = 1.5").unwrap_err();
        assert!(e.to_string().contains("beta"), "{e}");
        let e = parse_config("r_w = -1").unwrap_err();
        assert!(e.to_string().contains("r_w"), "{e}");
        let e = parse_config("dt_min = 6").unwrap_err();
        assert!(e.to_string().contains("dt_min"), "{e}");
        let e = parse_config("gamma1 = fast").unwrap_err();
        assert!(matches!(e, ConfigError::BadValue { line: 1, .. }), "{e}");
        assert!(e.to_string().contains("gamma1"));
    }

    #[test]
    fn syntax_errors() {
        assert!(matches!(parse_config("beta 0.1"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(
            parse_config("\nspeed = 3"),
            Err(ConfigError::UnknownKey { line: 2, .. })
        ));
        assert!(matches!(
            parse_config("beta = 0.1\nbeta = 0.2"),
            Err(ConfigError::Duplicate { line: 2, .. })
        ));
    }
}
