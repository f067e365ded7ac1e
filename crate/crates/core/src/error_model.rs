//! Path-frame tracking errors against a desired posture that slides along
//! the path so the longitudinal error stays zero.
//!
//! Sign conventions (used everywhere downstream):
//! - `y_e` is the component of (path point − rear axle) along the path's
//!   left normal, so `y_e > 0` when the vehicle is to the *right* of the path;
//! - `θ_e = θ_ref − θ`.
//!
//! With these, `ẏ_e = v_B sin(θ_e − α_r)` holds exactly.

use serde::Serialize;

use crate::path::{Path, RefSample};
use crate::{wrap_angle, Result, SteerError};

/// Lateral offset beyond which the local projection is considered lost.
pub const MAX_LATERAL: f64 = 10.0;
const SCAN_STEP: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorState {
    pub y_e: f64,
    pub theta_e: f64,
    pub theta_bar_e: f64,
    pub sigma_k: f64,
    pub s_ref: f64,
    pub v_ref: f64,
    /// Residual longitudinal offset in the desired frame (ideally 0).
    pub x_e: f64,
    pub kappa_ref: f64,
    pub dkappa_ref: f64,
    pub theta_ref: f64,
    pub seg_index: usize,
    /// Projection sits at the path end.
    pub at_end: bool,
}

/// Rear-axle pose and speed as seen by the error model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxlePose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    /// Rear-axle speed.
    pub v: f64,
    /// Rear-axle slip angle.
    pub alpha_r: f64,
}

fn along(path: &Path, pose: &AxlePose, s: f64) -> (f64, RefSample) {
    let r = path.sample(s);
    let (st, ct) = r.theta.sin_cos();
    ((pose.x - r.x) * ct + (pose.y - r.y) * st, r)
}

fn bisect(path: &Path, pose: &AxlePose, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if along(path, pose, mid).0 > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-11 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Find the foot point in `[lo, hi]` nearest to `center`.
fn project(path: &Path, pose: &AxlePose, lo: f64, hi: f64, center: f64) -> Option<f64> {
    let len = path.length();
    let lo = lo.max(0.0);
    let hi = hi.min(len);
    let n = (((hi - lo) / SCAN_STEP).ceil() as usize).max(1);
    let h = (hi - lo) / n as f64;
    let mut best: Option<(f64, f64)> = None;
    let mut prev = along(path, pose, lo).0;
    if prev <= 0.0 && lo == 0.0 {
        // behind (or at) the start
        best = Some((0.0, center.abs()));
    }
    for k in 1..=n {
        let b = lo + k as f64 * h;
        let fb = along(path, pose, b).0;
        if prev > 0.0 && fb <= 0.0 {
            let root = bisect(path, pose, b - h, b);
            let dist = (root - center).abs();
            if best.is_none_or(|(_, d)| dist < d) {
                best = Some((root, dist));
            }
        }
        prev = fb;
    }
    if prev > 0.0 && hi == len {
        let dist = (len - center).abs();
        if best.is_none_or(|(_, d)| dist < d) {
            best = Some((len, dist));
        }
    }
    best.map(|(s, _)| s)
}

fn assemble(path: &Path, pose: &AxlePose, s: f64, sigma_k: f64, t: f64) -> Result<ErrorState> {
    let (x_e, r) = along(path, pose, s);
    let (st, ct) = r.theta.sin_cos();
    let y_e = (pose.x - r.x) * st - (pose.y - r.y) * ct;
    if y_e.abs() > MAX_LATERAL {
        return Err(SteerError::ProjectionLost {
            t,
            s_ref: s,
            reason: format!("lateral offset {y_e:.2} m"),
        });
    }
    let theta_e = wrap_angle(r.theta - pose.theta);
    let v_ref = pose.v * (theta_e - pose.alpha_r).cos() / (1.0 + y_e * r.kappa);
    Ok(ErrorState {
        y_e,
        theta_e,
        theta_bar_e: theta_e,
        sigma_k,
        s_ref: s,
        v_ref,
        x_e: if s > 0.0 && s < path.length() {
            x_e
        } else {
            0.0
        },
        kappa_ref: r.kappa,
        dkappa_ref: r.dkappa,
        theta_ref: r.theta,
        seg_index: r.seg_index,
        at_end: s >= path.length(),
    })
}

/// Global projection used once at start-up.
pub fn initial_reference(path: &Path, pose: &AxlePose) -> Result<ErrorState> {
    // nearest foot point over the whole path
    let len = path.length();
    let mut best: Option<(f64, f64)> = None;
    let n = (len / SCAN_STEP).ceil() as usize;
    let h = len / n as f64;
    let mut prev = along(path, pose, 0.0).0;
    let mut consider = |s: f64| {
        let r = path.sample(s);
        let d = (pose.x - r.x).hypot(pose.y - r.y);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((s, d));
        }
    };
    if prev <= 0.0 {
        consider(0.0);
    }
    for k in 1..=n {
        let b = k as f64 * h;
        let fb = along(path, pose, b).0;
        if prev > 0.0 && fb <= 0.0 {
            consider(bisect(path, pose, b - h, b));
        }
        prev = fb;
    }
    if prev > 0.0 {
        consider(len);
    }
    let s = best
        .map(|b| b.0)
        .ok_or_else(|| SteerError::ProjectionLost {
            t: 0.0,
            s_ref: 0.0,
            reason: "no foot point on the path".into(),
        })?;
    assemble(path, pose, s, 0.0, 0.0)
}

/// Advance the desired posture and recompute the errors.
pub fn update_reference(
    path: &Path,
    pose: &AxlePose,
    prev: &ErrorState,
    dt: f64,
    t: f64,
) -> Result<ErrorState> {
    let w = pose.v.abs() * dt + 2.0;
    let s = project(path, pose, prev.s_ref - w, prev.s_ref + w, prev.s_ref).ok_or_else(|| {
        SteerError::ProjectionLost {
            t,
            s_ref: prev.s_ref,
            reason: "no foot point inside the search window".into(),
        }
    })?;
    let mut e = assemble(path, pose, s, prev.sigma_k, t)?;
    e.sigma_k = prev.sigma_k + 0.5 * dt * (prev.y_e + e.y_e);
    Ok(e)
}

/// Slip-compensated heading error `θ_e + K_F β̂`.
pub fn compensated_heading(theta_e: f64, beta_hat: f64, k_f: f64) -> f64 {
    theta_e + k_f * beta_hat
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path::{build_path, SegmentSpec};
    use approx::assert_relative_eq;

    fn pose(x: f64, y: f64, theta: f64, v: f64) -> AxlePose {
        AxlePose {
            x,
            y,
            theta,
            v,
            alpha_r: 0.0,
        }
    }

    #[test]
    fn on_path_zero_error() {
        let p = build_path(&[SegmentSpec::line(100.0)]).unwrap();
        let e = initial_reference(&p, &pose(30.0, 0.0, 0.0, 5.0)).unwrap();
        assert_relative_eq!(e.s_ref, 30.0, epsilon = 1e-9);
        assert!(e.y_e.abs() < 1e-12 && e.theta_e == 0.0);
        assert_relative_eq!(e.v_ref, 5.0, epsilon = 1e-12);
    }

    #[test]
    fn lateral_sign_convention() {
        let p = build_path(&[SegmentSpec::line(100.0)]).unwrap();
        let right = initial_reference(&p, &pose(10.0, -0.5, 0.0, 1.0)).unwrap();
        assert_relative_eq!(right.y_e, 0.5, epsilon = 1e-12);
        let left = initial_reference(&p, &pose(10.0, 0.5, 0.0, 1.0)).unwrap();
        assert_relative_eq!(left.y_e, -0.5, epsilon = 1e-12);
        assert_eq!(left.theta_e, 0.0);
    }

    #[test]
    fn arc_reference_speed() {
        let p = build_path(&[SegmentSpec::arc(50.0, 150.0)]).unwrap();
        let r = p.sample(40.0);
        let e = initial_reference(&p, &pose(r.x, r.y, r.theta, 10.0)).unwrap();
        assert_relative_eq!(e.v_ref, 10.0, epsilon = 1e-9);
        assert_relative_eq!(e.kappa_ref * e.v_ref, 0.2, epsilon = 1e-9);
    }

    #[test]
    fn offset_on_arc_scales_reference_speed() {
        let p = build_path(&[SegmentSpec::arc(50.0, 150.0)]).unwrap();
        let r = p.sample(40.0);
        // 1 m outside the left turn (to the right of path)
        let (nx, ny) = (-r.theta.sin(), r.theta.cos());
        let e = initial_reference(&p, &pose(r.x - nx, r.y - ny, r.theta, 10.0)).unwrap();
        assert_relative_eq!(e.y_e, 1.0, epsilon = 1e-9);
        assert_relative_eq!(e.v_ref, 10.0 / 1.02, epsilon = 1e-9);
    }

    #[test]
    fn local_update_tracks_and_integrates() {
        let p = build_path(&[SegmentSpec::line(100.0)]).unwrap();
        let e0 = initial_reference(&p, &pose(0.0, -0.2, 0.0, 10.0)).unwrap();
        let e1 = update_reference(&p, &pose(0.1, -0.4, 0.0, 10.0), &e0, 0.01, 0.01).unwrap();
        assert_relative_eq!(e1.s_ref, 0.1, epsilon = 1e-9);
        assert_relative_eq!(e1.sigma_k, 0.5 * 0.01 * (0.2 + 0.4), epsilon = 1e-12);
        assert!(e1.x_e.abs() < 1e-9);
    }

    #[test]
    fn divergence_is_reported() {
        let p = build_path(&[SegmentSpec::line(100.0)]).unwrap();
        let e0 = initial_reference(&p, &pose(10.0, 0.0, 0.0, 10.0)).unwrap();
        let r = update_reference(&p, &pose(10.0, 12.0, 0.0, 10.0), &e0, 0.01, 1.0);
        assert!(matches!(r, Err(SteerError::ProjectionLost { .. })));
        // jump far ahead of the search window
        let r = update_reference(&p, &pose(60.0, 0.0, 0.0, 10.0), &e0, 0.01, 1.0);
        assert!(matches!(r, Err(SteerError::ProjectionLost { .. })));
    }

    #[test]
    fn compensated_heading_cases() {
        assert_eq!(compensated_heading(0.05, 0.0, 1.0), 0.05);
        assert_relative_eq!(compensated_heading(0.05, -0.01, 1.0), 0.04, epsilon = 1e-15);
        assert_eq!(compensated_heading(0.05, 0.3, 0.0), 0.05);
    }
}
