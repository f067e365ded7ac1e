//! High-gain observer for yaw rate and sideslip from a yaw-rate gyro.
//!
//! The sideslip injection is scaled by `1/a21`: the measured yaw rate sees
//! sideslip only through `a21 β`, so `h2` acts on `a21 β̃` and the error
//! dynamics keep the `s² + α1 s + α2` structure regardless of the sign of
//! `a21`.

use serde::{Deserialize, Serialize};

use crate::integrate::rk4_step;
use crate::vehicle::DynCoeffs;
use crate::{Result, SteerError};

/// Below this `|a21|` sideslip does not reach the yaw-rate output.
pub const A21_MIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HgoConfig {
    pub alpha1: f64,
    pub alpha2: f64,
    pub eps: f64,
}

impl Default for HgoConfig {
    fn default() -> Self {
        HgoConfig {
            alpha1: 2.0,
            alpha2: 1.0,
            eps: 0.05,
        }
    }
}

impl HgoConfig {
    pub fn h1(&self) -> f64 {
        self.alpha1 / self.eps
    }

    pub fn h2(&self) -> f64 {
        self.alpha2 / (self.eps * self.eps)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha1 > 0.0 && self.alpha2 > 0.0) {
            return Err(SteerError::param("alpha1/alpha2", "must be positive"));
        }
        if !(self.eps > 0.0 && self.eps <= 0.2) {
            return Err(SteerError::param("eps", "must lie in (0, 0.2]"));
        }
        Ok(())
    }

    /// Largest admissible integration step for the given model.
    pub fn max_step(&self, c: &DynCoeffs) -> f64 {
        (self.eps / 5.0).min(1.0 / (c.stiffness() + self.h1()))
    }

    /// Scaled error matrix; its eigenvalues are the roots of `s² + α1 s + α2` over ε.
    pub fn scaled_error_matrix(&self) -> [[f64; 2]; 2] {
        [
            [-self.alpha1 / self.eps, 1.0 / self.eps],
            [-self.alpha2 / self.eps, 0.0],
        ]
    }

    /// Roots of `s² + α1 s + α2` divided by ε, as (re, im) pairs.
    pub fn design_poles(&self) -> [(f64, f64); 2] {
        let (a1, a2) = (self.alpha1, self.alpha2);
        let disc = a1 * a1 - 4.0 * a2;
        let e = self.eps;
        if disc >= 0.0 {
            let s = disc.sqrt();
            [((-a1 + s) / (2.0 * e), 0.0), ((-a1 - s) / (2.0 * e), 0.0)]
        } else {
            let s = (-disc).sqrt();
            [
                (-a1 / (2.0 * e), s / (2.0 * e)),
                (-a1 / (2.0 * e), -s / (2.0 * e)),
            ]
        }
    }

    /// Full linear estimation-error matrix over `(r̃, β̃)` for a model.
    pub fn error_matrix(&self, c: &DynCoeffs) -> [[f64; 2]; 2] {
        [
            [c.a22 - self.h1(), c.a21],
            [c.a12 - self.h2() / c.a21, c.a11],
        ]
    }

    /// Steady sideslip estimation error under a constant sideslip disturbance
    /// acting on the linear plant.
    pub fn steady_beta_error(&self, c: &DynCoeffs, delta_beta: f64) -> f64 {
        -delta_beta / (c.a11 + (c.a12 * c.a21 - self.h2()) / (self.h1() - c.a22))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct HgoState {
    pub r_hat: f64,
    pub beta_hat: f64,
}

/// Observer right-hand side `(r̂̇, β̂̇)`.
pub fn hgo_deriv(s: &HgoState, y: f64, phi: f64, c: &DynCoeffs, cfg: &HgoConfig) -> (f64, f64) {
    let innov = y - s.r_hat;
    (
        c.a21 * s.beta_hat + c.a22 * s.r_hat + c.b21 * phi + cfg.h1() * innov,
        c.a11 * s.beta_hat + c.a12 * s.r_hat + c.b11 * phi + cfg.h2() / c.a21 * innov,
    )
}

fn check(c: &DynCoeffs) -> Result<()> {
    if c.a21.abs() < A21_MIN {
        return Err(SteerError::Unobservable { a21: c.a21 });
    }
    Ok(())
}

/// One RK4 step with constant measurement and steering input.
pub fn hgo_step(
    s: &HgoState,
    y: f64,
    phi: f64,
    c: &DynCoeffs,
    cfg: &HgoConfig,
    dt: f64,
) -> Result<HgoState> {
    hgo_step_interp(s, (y, y), (phi, phi), c, cfg, dt)
}

/// One RK4 step with inputs interpolated linearly across the step.
pub fn hgo_step_interp(
    s: &HgoState,
    y: (f64, f64),
    phi: (f64, f64),
    c: &DynCoeffs,
    cfg: &HgoConfig,
    dt: f64,
) -> Result<HgoState> {
    check(c)?;
    let limit = cfg.eps / 5.0;
    if dt > limit * (1.0 + 1e-12) {
        return Err(SteerError::ObserverStiffness { dt, limit });
    }
    let mut f = |tau: f64, x: &[f64; 2]| {
        let w = tau / dt;
        let yy = y.0 + (y.1 - y.0) * w;
        let pp = phi.0 + (phi.1 - phi.0) * w;
        let d = hgo_deriv(
            &HgoState {
                r_hat: x[0],
                beta_hat: x[1],
            },
            yy,
            pp,
            c,
            cfg,
        );
        [d.0, d.1]
    };
    let x = rk4_step(&mut f, 0.0, &[s.r_hat, s.beta_hat], dt);
    Ok(HgoState {
        r_hat: x[0],
        beta_hat: x[1],
    })
}

/// Advance the observer across one control period with automatic substeps.
pub fn hgo_advance(
    s: &HgoState,
    y: (f64, f64),
    phi: (f64, f64),
    c: &DynCoeffs,
    cfg: &HgoConfig,
    dt: f64,
) -> Result<HgoState> {
    let n = (dt / cfg.max_step(c)).ceil().max(1.0) as usize;
    let h = dt / n as f64;
    let mut st = *s;
    for k in 0..n {
        let a = k as f64 / n as f64;
        let b = (k + 1) as f64 / n as f64;
        let yk = (y.0 + (y.1 - y.0) * a, y.0 + (y.1 - y.0) * b);
        let pk = (phi.0 + (phi.1 - phi.0) * a, phi.0 + (phi.1 - phi.0) * b);
        st = hgo_step_interp(&st, yk, pk, c, cfg, h)?;
    }
    Ok(st)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vehicle::{dyn_coeffs, linear_slip_yaw_deriv, PlantState, VehicleParams};
    use approx::assert_relative_eq;
    use nalgebra::Matrix2;

    #[test]
    fn gain_formulas() {
        let cfg = HgoConfig::default();
        assert_relative_eq!(cfg.h1(), 40.0, epsilon = 1e-12);
        assert_relative_eq!(cfg.h2(), 400.0, epsilon = 1e-9);
    }

    #[test]
    fn scaled_eigenvalues_match_design_poles() {
        for &(a1, a2, e) in &[
            (2.0, 1.0, 0.05),
            (3.0, 2.0, 0.1),
            (1.0, 4.0, 0.02),
            (2.5, 1.2, 0.025),
        ] {
            let cfg = HgoConfig {
                alpha1: a1,
                alpha2: a2,
                eps: e,
            };
            let m = cfg.scaled_error_matrix();
            let mat = Matrix2::new(m[0][0], m[0][1], m[1][0], m[1][1]);
            let mut eig: Vec<(f64, f64)> = mat
                .complex_eigenvalues()
                .iter()
                .map(|z| (z.re, z.im))
                .collect();
            let mut want = cfg.design_poles().to_vec();
            let key = |p: &(f64, f64)| {
                (p.0 * 1e6).round() as i64 * 1_000_000 + (p.1 * 1e3).round() as i64
            };
            eig.sort_by_key(key);
            want.sort_by_key(key);
            for (g, w) in eig.iter().zip(&want) {
                let scale = 1.0 + w.0.abs().max(w.1.abs());
                assert!(
                    (g.0 - w.0).abs() < 1e-9 * scale && (g.1 - w.1).abs() < 1e-9 * scale,
                    "{g:?} vs {w:?}"
                );
            }
        }
    }

    #[test]
    fn full_error_dynamics_are_stable_and_approach_design() {
        let c = dyn_coeffs(&VehicleParams::nominal(), 10.0);
        let mut prev_gap = f64::INFINITY;
        for &e in &[0.1, 0.05, 0.02, 0.01] {
            let cfg = HgoConfig {
                eps: e,
                ..Default::default()
            };
            let m = cfg.error_matrix(&c);
            let tr = m[0][0] + m[1][1];
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            assert!(tr < 0.0 && det > 0.0);
            // relative sum/product mismatch against s² + h1 s + h2
            let gap = ((-tr - cfg.h1()) / cfg.h1())
                .abs()
                .max(((det - cfg.h2()) / cfg.h2()).abs());
            assert!(gap < prev_gap);
            prev_gap = gap;
        }
    }

    #[test]
    fn unscaled_injection_would_be_unstable() {
        // Same gains without the 1/a21 scaling: the determinant turns negative.
        let c = dyn_coeffs(&VehicleParams::nominal(), 10.0);
        let cfg = HgoConfig::default();
        let det = (c.a22 - cfg.h1()) * c.a11 - c.a21 * (c.a12 - cfg.h2());
        assert!(det < 0.0);
    }

    #[test]
    fn exact_model_keeps_zero_error() {
        let c = dyn_coeffs(&VehicleParams::nominal(), 10.0);
        let cfg = HgoConfig::default();
        let mut truth = PlantState {
            beta: 0.01,
            r: 0.05,
            phi: 0.02,
            v: 10.0,
            ..Default::default()
        };
        let mut est = HgoState {
            r_hat: truth.r,
            beta_hat: truth.beta,
        };
        let dt = 0.01;
        for _ in 0..200 {
            let y0 = truth.r;
            let mut f = |_t: f64, x: &[f64; 2]| {
                let s = PlantState {
                    beta: x[0],
                    r: x[1],
                    ..truth
                };
                let (a, b) = linear_slip_yaw_deriv(&s, &c, (0.0, 0.0));
                [a, b]
            };
            // fine plant integration, matching the observer's substeps
            let n = 20;
            let mut x = [truth.beta, truth.r];
            let mut ys = vec![y0];
            for _ in 0..n {
                x = crate::integrate::rk4_step(&mut f, 0.0, &x, dt / n as f64);
                ys.push(x[1]);
            }
            truth.beta = x[0];
            truth.r = x[1];
            for k in 0..n {
                est = hgo_step_interp(
                    &est,
                    (ys[k], ys[k + 1]),
                    (0.02, 0.02),
                    &c,
                    &cfg,
                    dt / n as f64,
                )
                .unwrap();
            }
        }
        assert!((est.beta_hat - truth.beta).abs() < 1e-6);
        assert!((est.r_hat - truth.r).abs() < 1e-6);
    }

    #[test]
    fn steady_error_shrinks_with_eps() {
        let c = dyn_coeffs(&VehicleParams::nominal(), 10.0);
        let db = 0.05;
        let mut prev = f64::INFINITY;
        for &e in &[0.1, 0.05, 0.025] {
            let cfg = HgoConfig {
                eps: e,
                ..Default::default()
            };
            // simulate the linear plant plus observer to steady state
            let mut x = [0.0f64; 4]; // β, r, β̂, r̂
            let phi = 0.0;
            let dt = cfg.max_step(&c);
            let mut f = |_t: f64, s: &[f64; 4]| {
                let (bd, rd) = linear_slip_yaw_deriv(
                    &PlantState {
                        beta: s[0],
                        r: s[1],
                        phi,
                        ..Default::default()
                    },
                    &c,
                    (db, 0.0),
                );
                let (rh, bh) = hgo_deriv(
                    &HgoState {
                        r_hat: s[3],
                        beta_hat: s[2],
                    },
                    s[1],
                    phi,
                    &c,
                    &cfg,
                );
                [bd, rd, bh, rh]
            };
            for _ in 0..((5.0 / dt) as usize) {
                x = crate::integrate::rk4_step(&mut f, 0.0, &x, dt);
            }
            let err = x[0] - x[2];
            assert_relative_eq!(err, cfg.steady_beta_error(&c, db), epsilon = 1e-9);
            assert!(err.abs() < prev);
            prev = err.abs();
        }
    }

    #[test]
    fn stiffness_guard_and_observability() {
        let c = dyn_coeffs(&VehicleParams::nominal(), 10.0);
        let cfg = HgoConfig::default();
        assert!(matches!(
            hgo_step(&HgoState::default(), 0.0, 0.0, &c, &cfg, 0.011),
            Err(SteerError::ObserverStiffness { .. })
        ));
        let sym = dyn_coeffs(
            &VehicleParams {
                cf: 200e3,
                ..VehicleParams::nominal()
            },
            10.0,
        );
        assert!(matches!(
            hgo_step(&HgoState::default(), 0.0, 0.0, &sym, &cfg, 0.001),
            Err(SteerError::Unobservable { .. })
        ));
        assert!(hgo_advance(&HgoState::default(), (0.0, 0.0), (0.0, 0.0), &c, &cfg, 0.01).is_ok());
    }
}
