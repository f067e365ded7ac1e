//! Vehicle parameters, the linear slip-yaw model and the nonlinear truth plant.

use serde::{Deserialize, Serialize};

use crate::{Result, SteerError, GRAVITY};

/// Hard steering-angle limit (rad), ±35°.
pub const PHI_MAX: f64 = 35.0 * std::f64::consts::PI / 180.0;
/// Hard steering-rate limit (rad/s).
pub const OMEGA_MAX: f64 = 0.3;
/// Relaxation time used below `v_eps`, where the tire model is switched off.
const LOW_SPEED_TAU: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleParams {
    pub m: f64,
    pub j: f64,
    pub lf: f64,
    pub lr: f64,
    pub cf: f64,
    pub cr: f64,
    pub mu: f64,
    #[serde(default = "default_v_eps")]
    pub v_eps: f64,
}

fn default_v_eps() -> f64 {
    0.5
}

impl VehicleParams {
    /// Design-time parameter set (the controller's belief).
    pub fn nominal() -> Self {
        VehicleParams {
            m: 2540.0,
            j: 5000.0,
            lf: 1.5,
            lr: 1.5,
            cf: 230e3,
            cr: 200e3,
            mu: 0.8,
            v_eps: 0.5,
        }
    }

    /// Perturbed set used as the simulated vehicle.
    pub fn perturbed() -> Self {
        VehicleParams {
            m: 2300.0,
            j: 4500.0,
            lf: 1.4,
            lr: 1.6,
            cf: 110e3,
            cr: 110e3,
            mu: 0.8,
            v_eps: 0.5,
        }
    }

    /// Wet road: lower friction and softer tires.
    pub fn rainy(self) -> Self {
        VehicleParams {
            mu: 0.5,
            cf: self.cf * 0.7,
            cr: self.cr * 0.7,
            ..self
        }
    }

    pub fn wheelbase(&self) -> f64 {
        self.lf + self.lr
    }

    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("m", self.m),
            ("j", self.j),
            ("lf", self.lf),
            ("lr", self.lr),
            ("cf", self.cf),
            ("cr", self.cr),
            ("v_eps", self.v_eps),
        ];
        for (name, val) in pos {
            if !(val.is_finite() && val > 0.0) {
                return Err(SteerError::param(
                    name,
                    format!("must be positive, got {val}"),
                ));
            }
        }
        if !(self.mu > 0.0 && self.mu <= 1.5) {
            return Err(SteerError::param(
                "mu",
                format!("must lie in (0, 1.5], got {}", self.mu),
            ));
        }
        Ok(())
    }

    /// Floored speed used by every model-based expression.
    #[inline]
    pub fn vbar(&self, v: f64) -> f64 {
        v.max(self.v_eps)
    }
}

/// Linear slip-yaw model coefficients at one speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynCoeffs {
    pub a11: f64,
    pub a12: f64,
    pub a21: f64,
    pub a22: f64,
    pub b11: f64,
    pub b21: f64,
}

pub fn dyn_coeffs(p: &VehicleParams, v: f64) -> DynCoeffs {
    let vb = p.vbar(v);
    let moment = p.cf * p.lf - p.cr * p.lr;
    DynCoeffs {
        a11: -(p.cf + p.cr) / (p.m * vb),
        a12: -(1.0 + moment / (p.m * vb * vb)),
        a21: -moment / p.j,
        a22: -(p.cf * p.lf * p.lf + p.cr * p.lr * p.lr) / (p.j * vb),
        b11: p.cf / (p.m * vb),
        b21: p.cf * p.lf / p.j,
    }
}

impl DynCoeffs {
    /// Upper bound on the magnitude of the model's eigenvalues (row-sum norm).
    pub fn stiffness(&self) -> f64 {
        (self.a11.abs() + self.a12.abs()).max(self.a21.abs() + self.a22.abs())
    }
}

/// Dynamic truth state plus global CG pose. Speed is scripted, not integrated.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlantState {
    pub beta: f64,
    pub r: f64,
    pub phi: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
}

impl PlantState {
    pub fn to_vec(&self) -> [f64; 6] {
        [self.beta, self.r, self.phi, self.x, self.y, self.theta]
    }

    pub fn with_vec(&self, s: &[f64; 6], v: f64) -> PlantState {
        PlantState {
            beta: s[0],
            r: s[1],
            phi: s[2],
            x: s[3],
            y: s[4],
            theta: s[5],
            v,
        }
    }

    /// Rear-axle position.
    pub fn rear_axle(&self, p: &VehicleParams) -> (f64, f64) {
        (
            self.x - p.lr * self.theta.cos(),
            self.y - p.lr * self.theta.sin(),
        )
    }

    /// Geometric front and rear tire slip angles.
    pub fn slip_angles(&self, p: &VehicleParams) -> (f64, f64) {
        if self.v < p.v_eps {
            return (0.0, 0.0);
        }
        let vx = self.v * self.beta.cos();
        let vy = self.v * self.beta.sin();
        let af = ((vy + self.r * p.lf) / vx).atan() - self.phi;
        let ar = ((vy - self.r * p.lr) / vx).atan();
        (af, ar)
    }

    /// Rear-axle speed `v cosβ / cos α_r`.
    pub fn rear_speed(&self, p: &VehicleParams) -> f64 {
        let (_, ar) = self.slip_angles(p);
        self.v * self.beta.cos() / ar.cos()
    }
}

/// Exogenous inputs for one plant evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlantInput {
    /// Commanded steering rate (already clamped by the caller).
    pub omega: f64,
    pub v_dot: f64,
    /// Body-lateral force bias at the CG (N), e.g. a road slope.
    pub slope_force: f64,
    pub delta_beta: f64,
    pub delta_r: f64,
}

/// Slope bias for a lateral grade (e.g. 0.1 for 10%).
pub fn slope_force(p: &VehicleParams, grade: f64) -> f64 {
    p.m * GRAVITY * grade.atan().sin()
}

/// Linear model right-hand side: `(β̇, ṙ)`.
pub fn linear_slip_yaw_deriv(s: &PlantState, c: &DynCoeffs, disturbance: (f64, f64)) -> (f64, f64) {
    (
        c.a11 * s.beta + c.a12 * s.r + c.b11 * s.phi + disturbance.0,
        c.a21 * s.beta + c.a22 * s.r + c.b21 * s.phi + disturbance.1,
    )
}

/// Steering angle rate after the hard angle stop.
#[inline]
pub fn limited_phi_rate(phi: f64, omega: f64) -> f64 {
    if (phi >= PHI_MAX && omega > 0.0) || (phi <= -PHI_MAX && omega < 0.0) {
        0.0
    } else {
        omega
    }
}

/// Nonlinear planar force balance with linear-stiffness tires.
///
/// Returns the derivative of `[β, r, φ, x, y, θ]`.
pub fn nonlinear_truth_deriv(s: &PlantState, p: &VehicleParams, inp: &PlantInput) -> [f64; 6] {
    let v = s.v;
    let phi_dot = limited_phi_rate(s.phi, inp.omega);
    let heading = s.theta + s.beta;
    let (bd, rd) = if v < p.v_eps {
        // No usable tire kinematics: relax toward rolling-without-slip.
        let l = p.wheelbase();
        let tp = s.phi.tan();
        let bk = (p.lr * tp / l).atan();
        let rk = v * bk.cos() * tp / l;
        ((bk - s.beta) / LOW_SPEED_TAU, (rk - s.r) / LOW_SPEED_TAU)
    } else {
        let (af, ar) = s.slip_angles(p);
        let fyf = -p.cf * af;
        let fyr = -p.cr * ar;
        let (sb, cb) = s.beta.sin_cos();
        let cphi = s.phi.cos();
        let bd = (fyf * cphi + fyr + inp.slope_force - p.m * inp.v_dot * sb) / (p.m * v * cb) - s.r;
        let rd = (fyf * cphi * p.lf - fyr * p.lr) / p.j;
        (bd + inp.delta_beta, rd + inp.delta_r)
    };
    [bd, rd, phi_dot, v * heading.cos(), v * heading.sin(), s.r]
}

/// Lateral (velocity-normal) acceleration at the CG.
pub fn lateral_accel(s: &PlantState, beta_dot: f64, v_dot: f64) -> f64 {
    v_dot * s.beta.sin() + s.v * s.beta.cos() * (beta_dot + s.r)
}

/// Rear-axle slip from CG sideslip under steady cornering.
pub fn resolve_rear_slip(beta: f64, p: &VehicleParams, v: f64) -> Result<f64> {
    let vb = p.vbar(v);
    let den = p.cr * p.wheelbase() * p.lr / (p.m * vb * vb * p.lf) - 1.0;
    if den.abs() < 1e-9 {
        return Err(SteerError::SingularSpeed { speed: vb });
    }
    Ok(-beta / den)
}

/// Steady-state CG sideslip on a path of curvature `kappa`.
pub fn steady_sideslip(kappa: f64, p: &VehicleParams, v: f64) -> f64 {
    let vb = p.vbar(v);
    let l = p.wheelbase();
    kappa / (p.cr * l) * (p.cr * l * p.lr - p.m * vb * vb * p.lf)
}

/// Mismatch between CG sideslip and rear-axle slip in steady cornering.
pub fn sideslip_perturbation(kappa: f64, p: &VehicleParams, v: f64) -> f64 {
    let vb = p.vbar(v);
    let l = p.wheelbase();
    kappa / (p.cr * l) * (p.cr * l * p.lr - 2.0 * p.m * vb * vb * p.lf)
}

/// Comfort-limited curvature bound.
pub fn kappa_max(v: f64) -> f64 {
    if v <= 0.0 {
        return 0.03;
    }
    0.03f64.min(3.13 / (v * v))
}

/// Speed where the slip perturbation vanishes, `v² = C_r L L_r / (2 m L_f)`.
pub fn perturbation_zero_speed(p: &VehicleParams) -> f64 {
    (p.cr * p.wheelbase() * p.lr / (2.0 * p.m * p.lf)).sqrt()
}

/// Steady cornering `(β, r)` of the truth plant at fixed `φ` and `v` (Newton).
pub fn truth_steady_state(p: &VehicleParams, v: f64, phi: f64) -> Result<(f64, f64)> {
    let c = dyn_coeffs(p, v);
    // Linear-model guess.
    let det = c.a11 * c.a22 - c.a12 * c.a21;
    let mut x = [
        -(c.a22 * c.b11 - c.a12 * c.b21) * phi / det,
        -(c.a11 * c.b21 - c.a21 * c.b11) * phi / det,
    ];
    let f = |x: &[f64; 2]| {
        let s = PlantState {
            beta: x[0],
            r: x[1],
            phi,
            v,
            ..Default::default()
        };
        let d = nonlinear_truth_deriv(&s, p, &PlantInput::default());
        [d[0], d[1]]
    };
    for _ in 0..50 {
        let f0 = f(&x);
        if f0[0].abs().max(f0[1].abs()) < 1e-13 {
            return Ok((x[0], x[1]));
        }
        let h = 1e-7;
        let fb = f(&[x[0] + h, x[1]]);
        let fr = f(&[x[0], x[1] + h]);
        let j = [
            [(fb[0] - f0[0]) / h, (fr[0] - f0[0]) / h],
            [(fb[1] - f0[1]) / h, (fr[1] - f0[1]) / h],
        ];
        let d = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        x[0] -= (j[1][1] * f0[0] - j[0][1] * f0[1]) / d;
        x[1] -= (-j[1][0] * f0[0] + j[0][0] * f0[1]) / d;
    }
    let f0 = f(&x);
    if f0[0].abs().max(f0[1].abs()) < 1e-10 {
        Ok((x[0], x[1]))
    } else {
        Err(SteerError::NonFinite {
            t: 0.0,
            what: "steady-state cornering solve",
        })
    }
}
