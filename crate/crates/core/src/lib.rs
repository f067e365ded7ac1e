//! Slip-aware multi-tiered lateral steering control for ground vehicles.
//!
//! The crate is organised bottom-up along the control stack:
//!
//! - [`vehicle`]: parameters, slip-yaw model coefficients, the nonlinear
//!   truth plant and the rear-axle/CG slip relations.
//! - [`path`]: lines, arcs and clothoids composed into reference paths.
//! - [`error_model`]: path-frame tracking errors against a moving
//!   desired posture.
//! - [`kinematic`]: the continuous variable-structure yaw-rate law,
//!   hierarchical `c(t)` scheduling and safety bounds.
//! - [`dynamic`]: yaw-tracking and backstepping steering-rate laws.
//! - [`observer`]: high-gain observer for yaw rate and sideslip.
//! - [`baselines`]: cascaded PID and the non-slip robust controller used
//!   for comparison.
//! - [`sim`]: scenario description and the fixed-step closed loop.
//! - [`metrics`]: per-segment accuracy and gracefulness indices.
//! - [`analysis`]: the stability and gain-selection studies built on top
//!   of the modules above.

// NaN must fail parameter checks, hence the negated comparisons.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod baselines;
pub mod dynamic;
pub mod error;
pub mod error_model;
pub mod integrate;
pub mod jet;
pub mod kinematic;
pub mod metrics;
pub mod observer;
pub mod path;
pub mod plot;
pub mod sim;
pub mod vehicle;

pub use error::{Result, SteerError};

/// Standard gravity (m/s²).
pub const GRAVITY: f64 = 9.81;

/// Wrap an angle to (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Symmetric saturation of `x` to `[-limit, limit]`.
#[inline]
pub fn sat(x: f64, limit: f64) -> f64 {
    x.clamp(-limit, limit)
}
