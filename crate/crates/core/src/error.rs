use thiserror::Error;

pub type Result<T> = std::result::Result<T, SteerError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SteerError {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("rear-slip relation is singular at v = {speed:.4} m/s")]
    SingularSpeed { speed: f64 },

    #[error("invalid path: {0}")]
    Path(String),

    #[error("lost projection onto the path at t = {t:.3} s (s_ref = {s_ref:.3} m): {reason}")]
    ProjectionLost { t: f64, s_ref: f64, reason: String },

    #[error("non-finite state at t = {t:.3} s in {what}")]
    NonFinite { t: f64, what: &'static str },

    #[error("observer step {dt} s exceeds the stiffness limit {limit} s")]
    ObserverStiffness { dt: f64, limit: f64 },

    #[error("sideslip is unobservable from yaw rate (|a21| = {a21:.3e})")]
    Unobservable { a21: f64 },

    #[error("gain design infeasible: {0}")]
    Infeasible(String),

    #[error("scenario config: {0}")]
    Config(String),
}

impl SteerError {
    pub(crate) fn param(field: &'static str, reason: impl Into<String>) -> Self {
        SteerError::InvalidParameter {
            field,
            reason: reason.into(),
        }
    }
}
