//! Comparison controllers.
//!
//! **A** is a cascaded PID: lateral error (plus a heading damping term) to a
//! yaw-rate command, then yaw-rate error to steering rate. Gains are tuned
//! once by an automated step-response procedure and frozen.
//!
//! **B** is a sliding-manifold kinematic law without slip compensation and a
//! backstepping dynamic tier without integrators or output saturation. It
//! works in its own error frame: lateral error positive to the *left* of the
//! path and heading error `θ − θ_ref`, i.e. the negatives of ours.

use serde::{Deserialize, Serialize};

use crate::dynamic::{steady_steer_for_yaw, DynGains};
use crate::integrate::rk4_step;
use crate::jet::Jet;
use crate::kinematic::{KinGains, KinInputs};
use crate::vehicle::{dyn_coeffs, DynCoeffs, VehicleParams, OMEGA_MAX};
use crate::{Result, SteerError};

/// Yaw-rate command limit of the outer PID loop.
pub const R_CMD_MAX: f64 = 0.3;
/// 2 % settling time of a critically damped second-order system, times ωn.
const CRIT_SETTLE: f64 = 5.8339;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Derivative filter time constant (s).
    pub tau_d: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineAGains {
    /// Outer loop on `y_e`.
    pub kin: PidGains,
    /// Heading damping on `θ_e`.
    pub k_theta: f64,
    /// Inner loop on the yaw-rate error.
    pub dynamic: PidGains,
}

impl BaselineAGains {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.kin.kp,
            self.kin.ki,
            self.kin.kd,
            self.kin.tau_d,
            self.k_theta,
            self.dynamic.kp,
            self.dynamic.ki,
            self.dynamic.kd,
            self.dynamic.tau_d,
        ];
        if all.iter().any(|g| !(*g >= 0.0)) {
            return Err(SteerError::param(
                "baseline_a",
                "all gains must be non-negative",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineATuning {
    pub v_kin: f64,
    pub ts_kin: f64,
    pub step: f64,
    pub v_dyn: f64,
    pub ts_dyn: f64,
    pub derivative_tau: f64,
}

impl Default for BaselineATuning {
    fn default() -> Self {
        BaselineATuning {
            v_kin: 7.0,
            ts_kin: 4.0,
            step: 0.5,
            v_dyn: 10.0,
            ts_dyn: 2.0,
            derivative_tau: 0.05,
        }
    }
}

/// Outer-loop gains for a triple pole at `−p`: `(k_theta, kp, ki)`.
fn outer_gains(p: f64, v: f64) -> (f64, f64, f64) {
    (3.0 * p, 3.0 * p * p / v, p * p * p / v)
}

/// 2 % settling time of the idealised outer loop (`r = r_cmd`) after a
/// lateral step, from a 1 ms RK4 simulation.
pub fn outer_settling_time(k_theta: f64, kp: f64, ki: f64, v: f64, step: f64) -> f64 {
    let mut f = |_t: f64, x: &[f64; 3]| {
        // σ, y, θ_e with ẏ = v sinθ_e, θ̇_e = κv − r_cmd at κ = 0
        let r = k_theta * x[2] + kp * x[1] + ki * x[0];
        [x[1], v * x[2].sin(), -r]
    };
    settling(&mut f, [0.0, step, 0.0], 1, step, 1e-3, 30.0)
}

/// 2 % settling time of the full linear cascade: both PID loops around the
/// slip-yaw model at speed `v`, lateral error from the rear-axle slip.
pub fn cascade_settling_time(g: &BaselineAGains, model: &VehicleParams, v: f64, step: f64) -> f64 {
    let c = dyn_coeffs(model, v);
    let lr = model.lr;
    // β, r, φ, θ_e, y, σ_y, σ_r
    let mut f = |_t: f64, x: &[f64; 7]| {
        let r_cmd = g.k_theta * x[3] + g.kin.kp * x[4] + g.kin.ki * x[5];
        let er = r_cmd - x[1];
        [
            c.a11 * x[0] + c.a12 * x[1] + c.b11 * x[2],
            c.a21 * x[0] + c.a22 * x[1] + c.b21 * x[2],
            g.dynamic.kp * er + g.dynamic.ki * x[6],
            -x[1],
            v * (x[3] - x[0]) + lr * x[1],
            x[4],
            er,
        ]
    };
    let mut x0 = [0.0; 7];
    x0[4] = step;
    settling(&mut f, x0, 4, step, 2e-3, 40.0)
}

fn settling<const N: usize, F: FnMut(f64, &[f64; N]) -> [f64; N]>(
    f: &mut F,
    mut x: [f64; N],
    out: usize,
    step: f64,
    h: f64,
    horizon: f64,
) -> f64 {
    let mut last_out = 0.0;
    let n = (horizon / h).round() as usize;
    for k in 1..=n {
        x = rk4_step(f, 0.0, &x, h);
        if !(x[out].abs() <= 0.02 * step.abs()) {
            last_out = k as f64 * h;
        }
    }
    last_out
}

/// Auto-tune Baseline A. The inner PI is critically damped on the model's
/// static yaw gain at twice the outer speed of response. The outer loop is a
/// triple-pole family whose pole is then chosen on the full linear cascade:
/// the slowest pole meeting the settling target, or the fastest-settling one
/// when the target is out of reach.
pub fn tune_baseline_a(model: &VehicleParams, t: &BaselineATuning) -> Result<BaselineAGains> {
    if !(t.v_kin > 0.0 && t.v_dyn > 0.0 && t.ts_kin > 0.0 && t.ts_dyn > 0.0 && t.step > 0.0) {
        return Err(SteerError::param(
            "baseline_a_tuning",
            "speeds, times and step must be positive",
        ));
    }
    let c = dyn_coeffs(model, t.v_dyn);
    let gain = 1.0 / steady_steer_for_yaw(&c, 1.0);
    let wn = CRIT_SETTLE / t.ts_dyn;
    let dynamic = PidGains {
        kp: 2.0 * wn / gain,
        ki: wn * wn / gain,
        kd: 0.0,
        tau_d: t.derivative_tau,
    };
    let with_pole = |p: f64| {
        let (k_theta, kp, ki) = outer_gains(p, t.v_kin);
        BaselineAGains {
            kin: PidGains {
                kp,
                ki,
                kd: 0.0,
                tau_d: t.derivative_tau,
            },
            k_theta,
            dynamic,
        }
    };
    let ts = |p: f64| cascade_settling_time(&with_pole(p), model, t.v_kin, t.step);

    let grid: Vec<f64> = (1..=60).map(|k| 0.05 * k as f64).collect();
    let times: Vec<f64> = grid.iter().map(|&p| ts(p)).collect();
    let p = match times.iter().position(|&x| x <= t.ts_kin) {
        Some(0) => grid[0],
        Some(k) => {
            let (mut lo, mut hi) = (grid[k - 1], grid[k]);
            for _ in 0..30 {
                let mid = 0.5 * (lo + hi);
                if ts(mid) > t.ts_kin {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            hi
        }
        None => {
            let k = (0..grid.len())
                .min_by(|&a, &b| times[a].total_cmp(&times[b]))
                .unwrap_or(0);
            grid[k]
        }
    };
    Ok(with_pole(p))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct BaselineAState {
    pub sigma_y: f64,
    pub sigma_r: f64,
    pub dy_filt: f64,
    pub dr_filt: f64,
    pub y_prev: Option<f64>,
    pub er_prev: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct BaselineAOutput {
    pub r_cmd: f64,
    pub omega_raw: f64,
    pub omega: f64,
    pub saturated: bool,
}

fn filtered_derivative(prev: Option<f64>, x: f64, filt: f64, tau: f64, dt: f64) -> f64 {
    match prev {
        None => 0.0,
        Some(p) => {
            let raw = (x - p) / dt;
            if tau > 0.0 {
                filt + (raw - filt) * dt / (tau + dt)
            } else {
                raw
            }
        }
    }
}

/// One control period of Baseline A.
#[allow(clippy::too_many_arguments)]
pub fn baseline_a_step(
    y_e: f64,
    theta_e: f64,
    kappa: f64,
    vbar: f64,
    r_meas: f64,
    g: &BaselineAGains,
    st: &mut BaselineAState,
    dt: f64,
) -> BaselineAOutput {
    st.dy_filt = filtered_derivative(st.y_prev, y_e, st.dy_filt, g.kin.tau_d, dt);
    let r_raw = kappa * vbar
        + g.k_theta * theta_e
        + g.kin.kp * y_e
        + g.kin.ki * st.sigma_y
        + g.kin.kd * st.dy_filt;
    let r_cmd = r_raw.clamp(-R_CMD_MAX, R_CMD_MAX);
    if r_cmd == r_raw {
        st.sigma_y += y_e * dt;
    }
    st.y_prev = Some(y_e);

    let er = r_cmd - r_meas;
    st.dr_filt = filtered_derivative(st.er_prev, er, st.dr_filt, g.dynamic.tau_d, dt);
    let omega_raw = g.dynamic.kp * er + g.dynamic.ki * st.sigma_r + g.dynamic.kd * st.dr_filt;
    let omega = omega_raw.clamp(-OMEGA_MAX, OMEGA_MAX);
    let saturated = omega != omega_raw;
    if !saturated {
        st.sigma_r += er * dt;
    }
    st.er_prev = Some(er);
    BaselineAOutput {
        r_cmd,
        omega_raw,
        omega,
        saturated,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BaselineBKin {
    pub s_kin: f64,
    pub rho: f64,
    pub r_ref: f64,
    pub r_dot: f64,
    pub r_ddot: f64,
}

fn b_terms(inp: &KinInputs, g: &KinGains, theta_b: Jet, y_b: Jet, sigma_b: Jet) -> (Jet, Jet, Jet) {
    let v = Jet::new(inp.vbar, inp.v_dot, 0.0);
    let c = Jet::new(inp.c, inp.c_dot, 0.0);
    let c_dot = Jet::constant(inp.c_dot);
    let kappa = Jet::new(inp.kappa, inp.dkappa * inp.vbar, inp.dkappa * inp.v_dot);
    // asin needs |arg| < 1; the same domain clamp as ours is applied
    let q = ((c * y_b + sigma_b * g.k_i) / v).sat(g.a1);
    let s = q.asin() + theta_b;
    let inner =
        (c_dot * y_b + c * theta_b.sin() + y_b * g.k_i / v) / (Jet::constant(1.0) - q * q).sqrt();
    let rho = (inner - kappa * v).abs();
    let r = -((rho + g.psi) * s.scale(1.0 / g.eps).tanh());
    (s, rho, r)
}

/// Kinematic tier of Baseline B. Takes our error conventions and converts.
/// `inp.theta_bar_e` must carry the *uncompensated* heading error and
/// `inp.delta_ar` is ignored.
pub fn baseline_b_kinematic(inp: &KinInputs, g: &KinGains) -> BaselineBKin {
    let v = Jet::new(inp.vbar, inp.v_dot, 0.0);
    let kappa = Jet::new(inp.kappa, inp.dkappa * inp.vbar, inp.dkappa * inp.v_dot);
    let y0 = -inp.y_e;
    let th0 = -inp.theta_bar_e;
    let build = |theta_b: Jet| {
        let yd = v * theta_b.sin();
        let y_b = Jet::new(y0, yd.v, yd.d1);
        let sigma_b = Jet::new(-inp.sigma_k, y_b.v, y_b.d1);
        b_terms(inp, g, theta_b, y_b, sigma_b)
    };
    let mut theta = Jet::constant(th0);
    let mut r = build(theta).2;
    for _ in 0..2 {
        let kv = kappa * v;
        theta = Jet::new(th0, r.v - kv.v, r.d1 - kv.d1);
        r = build(theta).2;
    }
    let (s, rho, r) = build(theta);
    BaselineBKin {
        s_kin: s.v,
        rho: rho.v,
        r_ref: r.v,
        r_dot: r.d1,
        r_ddot: r.d2,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct BaselineBDyn {
    pub r_e: f64,
    pub phi_des: f64,
    pub phi_e: f64,
    pub omega_raw: f64,
    pub omega: f64,
}

/// Dynamic tier of Baseline B: `r̂_e = r̂ − r_ref`, `φ̂_e = φ − φ̂_des`, no
/// integrators and no limit on `φ̂_des`.
#[allow(clippy::too_many_arguments)]
pub fn baseline_b_dynamic(
    k: &BaselineBKin,
    beta_hat: f64,
    beta_hat_dot: f64,
    r_hat: f64,
    phi_act: f64,
    c: &DynCoeffs,
    g: &DynGains,
) -> BaselineBDyn {
    let r_e = r_hat - k.r_ref;
    let phi_des = -(c.a21 * beta_hat + c.a22 * k.r_ref - k.r_dot + g.kp1 * r_e) / c.b21;
    let phi_e = phi_act - phi_des;
    let r_e_dot = c.a21 * beta_hat + c.a22 * r_hat + c.b21 * phi_act - k.r_dot;
    let phi_des_dot =
        -(c.a21 * beta_hat_dot + c.a22 * k.r_dot - k.r_ddot + g.kp1 * r_e_dot) / c.b21;
    let omega_raw = phi_des_dot - r_e - g.kp2 * phi_e;
    BaselineBDyn {
        r_e,
        phi_des,
        phi_e,
        omega_raw,
        omega: omega_raw.clamp(-OMEGA_MAX, OMEGA_MAX),
    }
}
