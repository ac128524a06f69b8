use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("NID offset must be finite and > 0, got {0}")]
    InvalidNidParam(f64),

    #[error("robot geometry field `{field}` must be finite and > 0, got {value}")]
    InvalidGeometry { field: &'static str, value: f64 },

    #[error("weight `{name}` must lie in (0, 1), got {value}")]
    WeightOutOfRange { name: &'static str, value: f64 },

    #[error("invalid solver configuration: {0}")]
    InvalidSolverConfig(String),

    #[error("invalid experiment configuration: {0}")]
    InvalidExperimentConfig(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("horizon {dt} s outside [{dt_min}, {dt_max}]")]
    HorizonOutOfRange { dt: f64, dt_min: f64, dt_max: f64 },

    #[error("state became non-finite at t = {time} s")]
    Divergence { time: f64 },

    #[error("adjoint grid does not match the state trajectory: {0}")]
    GridMismatch(String),

    #[error("trajectory log is empty")]
    EmptyLog,
}
