//! Continuous variable-structure kinematic controller.
//!
//! The yaw-rate command drives the path manifold
//! `S = θ̄_e + asin(sat((c y_e + K_i σ_k)/v̄, a1))` to zero through a tanh
//! boundary layer. Its first two time derivatives are propagated exactly
//! with [`Jet`]s for use by the dynamic tier.

use serde::{Deserialize, Serialize};

use crate::jet::Jet;
use crate::{Result, SteerError, GRAVITY};

/// Floor applied to `c(t)` when the safety bound collapses.
pub const C_FLOOR: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum C0Mode {
    /// Small fixed start value.
    #[default]
    Fixed,
    /// Align the manifold with the initial posture when possible.
    Manifold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KinGains {
    pub c0: f64,
    pub c_ss: f64,
    pub t_end: f64,
    pub k_i: f64,
    pub psi: f64,
    pub eps: f64,
    pub a1: f64,
    pub k1: f64,
    pub k2: f64,
    /// Upper cap on the saturation threshold (rad/s).
    pub r_threshold_max: f64,
    /// Slip-compensation gain on β̂ in θ̄_e.
    pub k_f: f64,
    pub c0_mode: C0Mode,
    /// Apply the friction-derived cap on `c(t)`.
    pub safety_cap: bool,
    /// Below this speed the β̂ compensation fades out linearly (0 = off).
    pub slip_fade_speed: f64,
    /// Lower `c` until the command's implied steering rate is attainable.
    pub steer_rate_cap: bool,
}

impl Default for KinGains {
    fn default() -> Self {
        KinGains {
            c0: 0.05,
            c_ss: 3.0,
            t_end: 4.0,
            k_i: 0.1,
            psi: 0.1,
            eps: 0.1,
            a1: 0.9,
            k1: 0.8,
            k2: 0.49,
            r_threshold_max: 0.3,
            k_f: 1.0,
            c0_mode: C0Mode::Fixed,
            safety_cap: true,
            slip_fade_speed: 5.0,
            steer_rate_cap: true,
        }
    }
}

impl KinGains {
    /// Parameter set of the local-stability study: ψ = ε = 0.1, K_i = 0.04, c = 0.65.
    pub fn stability_study() -> Self {
        KinGains {
            c0: 0.65,
            c_ss: 0.65,
            k_i: 0.04,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = SteerError::param;
        if !(self.a1 > 0.0 && self.a1 < 1.0) {
            return Err(p("a1", "must lie in (0, 1)"));
        }
        if !(self.psi > 0.0) {
            return Err(p("psi", "must be positive"));
        }
        if !(self.eps > 0.0) {
            return Err(p("eps", "must be positive"));
        }
        if !(self.k2 > 0.0 && self.k2 < 1.0) {
            return Err(p("k2", "must lie in (0, 1)"));
        }
        if !(self.k1 > 0.0 && self.k1 <= 1.0) {
            return Err(p("k1", "must lie in (0, 1]"));
        }
        if !(self.c0 > 0.0 && self.c_ss > 0.0) {
            return Err(p("c0/c_ss", "must be positive"));
        }
        if !(self.t_end >= 0.0) {
            return Err(p("t_end", "must be non-negative"));
        }
        if !(self.k_i >= 0.0 && self.k_i <= self.c_ss / 10.0) {
            return Err(SteerError::param(
                "k_i",
                format!("must satisfy 0 ≤ K_i ≤ c_ss/10 = {}", self.c_ss / 10.0),
            ));
        }
        if !(self.r_threshold_max > 0.0) {
            return Err(p("r_threshold_max", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KinMode {
    Prop,
    PropS,
}

/// Friction-limited upper bound on `c(t)`.
#[allow(clippy::too_many_arguments)]
pub fn c_safe(
    g: &KinGains,
    mu: f64,
    vbar: f64,
    y_e: f64,
    theta_bar_e: f64,
    delta_ar: f64,
    c_dot: f64,
) -> f64 {
    let num = (g.k1 * g.k2 * mu * GRAVITY - (vbar * g.psi).abs()) * (1.0 - g.a1 * g.a1).sqrt()
        - (g.k_i * y_e).abs()
        - (c_dot * y_e).abs();
    let den = vbar.abs() * (theta_bar_e.sin().abs() + delta_ar.abs());
    if den == 0.0 {
        if num > 0.0 {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        }
    } else {
        num / den
    }
}

/// Largest admissible `k2` given the curvature reserve `|κ v̄²| < (1 − k2) k1 μ g`.
pub fn k2_bound(k1: f64, mu: f64, kappa: f64, vbar: f64) -> f64 {
    1.0 - (kappa * vbar * vbar).abs() / (k1 * mu * GRAVITY)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Schedule {
    pub c: f64,
    pub c_dot: f64,
    pub c_lin: f64,
    pub c_safe: f64,
    /// The friction cap is the active branch.
    pub capped: bool,
    /// The cap fell below the floor.
    pub violation: bool,
}

/// Linear ramp `c0 → c_ss` over `t_end`, bounded by the safety cap.
#[allow(clippy::too_many_arguments)]
pub fn schedule_c(
    g: &KinGains,
    c0: f64,
    t: f64,
    y_e: f64,
    theta_bar_e: f64,
    vbar: f64,
    mu: f64,
    delta_ar: f64,
) -> Schedule {
    let (c_lin, slope) = if t < g.t_end {
        let f = t / g.t_end;
        (g.c_ss * f + c0 * (1.0 - f), (g.c_ss - c0) / g.t_end)
    } else {
        (g.c_ss, 0.0)
    };
    let cs = if g.safety_cap {
        c_safe(g, mu, vbar, y_e, theta_bar_e, delta_ar, slope)
    } else {
        f64::INFINITY
    };
    let (mut c, mut c_dot, capped) = if cs < c_lin {
        (cs, 0.0, true)
    } else {
        (c_lin, slope, false)
    };
    let violation = c < C_FLOOR;
    if violation {
        c = C_FLOOR;
        c_dot = 0.0;
    }
    Schedule {
        c,
        c_dot,
        c_lin,
        c_safe: cs,
        capped,
        violation,
    }
}

/// Start value of `c(t)`; the manifold mode solves `S = 0` at the initial
/// posture when the posture lies in quadrant II/IV, else falls back.
pub fn initial_c0(g: &KinGains, y_e: f64, theta_bar_e: f64, vbar: f64) -> (f64, C0Mode) {
    if g.c0_mode == C0Mode::Manifold && y_e != 0.0 {
        let c0 = -vbar * theta_bar_e.sin() / y_e;
        if c0 > 0.0 && (c0 * y_e / vbar).abs() <= g.a1 {
            return (c0.min(g.c_ss), C0Mode::Manifold);
        }
    }
    (g.c0, C0Mode::Fixed)
}

/// Settling time and distance of the on-manifold dynamics.
pub fn settling_estimates(c: f64, vbar: f64) -> (f64, f64) {
    (4.0 / c, vbar * 4.0 / c)
}

/// Yaw-rate saturation threshold and whether the friction branch binds.
pub fn r_threshold(g: &KinGains, mu: f64, vbar: f64) -> (f64, bool) {
    let friction = g.k1 * g.k2 * mu * GRAVITY / vbar;
    if friction < g.r_threshold_max {
        (friction, true)
    } else {
        (g.r_threshold_max, false)
    }
}

/// Everything the kinematic law needs at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KinInputs {
    pub y_e: f64,
    pub theta_bar_e: f64,
    pub sigma_k: f64,
    pub kappa: f64,
    /// dκ/ds along the path.
    pub dkappa: f64,
    /// Floored speed v̄ and its rate (0 while floored).
    pub vbar: f64,
    pub v_dot: f64,
    pub c: f64,
    pub c_dot: f64,
    pub delta_ar: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ManifoldEval {
    pub s_kin: f64,
    pub saturated: bool,
    pub rho: f64,
    pub c: f64,
    pub c_dot: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KinCommand {
    pub eval: ManifoldEval,
    pub r_raw: f64,
    pub r_kin: f64,
    pub r_dot: f64,
    pub r_ddot: f64,
    pub clipped: bool,
}

struct Terms {
    s: Jet,
    rho: Jet,
    r_raw: Jet,
    saturated: bool,
}

fn terms(inp: &KinInputs, g: &KinGains, theta: Jet, y: Jet) -> Terms {
    let v = Jet::new(inp.vbar, inp.v_dot, 0.0);
    let c = Jet::new(inp.c, inp.c_dot, 0.0);
    let c_dot = Jet::constant(inp.c_dot);
    let kappa = Jet::new(inp.kappa, inp.dkappa * inp.vbar, inp.dkappa * inp.v_dot);
    let sigma = Jet::new(inp.sigma_k, y.v, y.d1);
    let delta = Jet::constant(inp.delta_ar);
    let arg = (c * y + sigma * g.k_i) / v;
    let saturated = arg.v.abs() > g.a1;
    let q = arg.sat(g.a1);
    let s = theta + q.asin();
    let num = c_dot * y + c * (v * theta.sin() - v * delta) + y * g.k_i;
    let den = v * (Jet::constant(1.0) - q * q).sqrt();
    let rho = (num / den).abs();
    let r_raw = kappa * v + (rho + g.psi) * (s.scale(1.0 / g.eps)).tanh();
    Terms {
        s,
        rho,
        r_raw,
        saturated,
    }
}

/// Manifold value and robust gain.
pub fn eval_manifold(inp: &KinInputs, g: &KinGains) -> ManifoldEval {
    let t = terms(
        inp,
        g,
        Jet::constant(inp.theta_bar_e),
        Jet::constant(inp.y_e),
    );
    ManifoldEval {
        s_kin: t.s.v,
        saturated: t.saturated,
        rho: t.rho.v,
        c: inp.c,
        c_dot: inp.c_dot,
    }
}

/// Yaw-rate command with exact first and second time derivatives.
///
/// Derivatives follow the closed-loop kinematic model: `ẏ_e = v̄ sin θ̄_e − v̄ δ_ar`
/// and `θ̄̇_e = κ v̄ − r_kin`, with `δ_ar`, `c̈` taken as constant.
pub fn yaw_command(inp: &KinInputs, g: &KinGains, mode: KinMode, r_threshold: f64) -> KinCommand {
    let v = Jet::new(inp.vbar, inp.v_dot, 0.0);
    let kappa = Jet::new(inp.kappa, inp.dkappa * inp.vbar, inp.dkappa * inp.v_dot);
    let clip = |raw: Jet| match mode {
        KinMode::PropS => raw.sat(r_threshold),
        KinMode::Prop => raw,
    };
    let y_of = |theta: Jet| {
        let yd = v * theta.sin() - v * Jet::constant(inp.delta_ar);
        Jet::new(inp.y_e, yd.v, yd.d1)
    };
    // Pass 1: value. Pass 2: first derivative. Pass 3: second derivative.
    let mut theta = Jet::constant(inp.theta_bar_e);
    let mut r = clip(terms(inp, g, theta, y_of(theta)).r_raw);
    for _ in 0..2 {
        let kv = kappa * v;
        theta = Jet::new(inp.theta_bar_e, kv.v - r.v, kv.d1 - r.d1);
        r = clip(terms(inp, g, theta, y_of(theta)).r_raw);
    }
    let t = terms(inp, g, theta, y_of(theta));
    let raw = t.r_raw;
    let clipped = mode == KinMode::PropS && raw.v.abs() > r_threshold;
    KinCommand {
        eval: ManifoldEval {
            s_kin: t.s.v,
            saturated: t.saturated,
            rho: t.rho.v,
            c: inp.c,
            c_dot: inp.c_dot,
        },
        r_raw: raw.v,
        r_kin: r.v,
        r_dot: r.d1,
        r_ddot: r.d2,
        clipped,
    }
}

/// Largest `c ≤ inp.c` whose command keeps the implied steering rate within
/// `omega_max`. Bisection; returns the floor if even that is too fast.
pub fn rate_feasible_c(
    inp: &KinInputs,
    g: &KinGains,
    mode: KinMode,
    r_threshold: f64,
    wheelbase: f64,
    omega_max: f64,
) -> f64 {
    let ok = |c: f64, c_dot: f64| {
        let k = KinInputs { c, c_dot, ..*inp };
        let cmd = yaw_command(&k, g, mode, r_threshold);
        implied_steering_rate(cmd.r_kin, cmd.r_dot, inp.vbar, wheelbase).abs() <= omega_max
    };
    if ok(inp.c, inp.c_dot) {
        return inp.c;
    }
    let (mut lo, mut hi) = (C_FLOOR, inp.c);
    if !ok(lo, 0.0) {
        return lo;
    }
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        if ok(mid, 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Steering rate implied by a yaw-rate command under rolling without slip.
pub fn implied_steering_rate(r: f64, r_dot: f64, vbar: f64, wheelbase: f64) -> f64 {
    r_dot * vbar * wheelbase / (vbar * vbar + r * r * wheelbase * wheelbase)
}

/// Grid of `|ω| ≤ omega_max` flags over `(y_e, θ_e)`; rows follow `thetas`.
pub fn steering_saturation_region(
    c: f64,
    vbar: f64,
    wheelbase: f64,
    omega_max: f64,
    y_grid: &[f64],
    theta_grid: &[f64],
) -> Vec<Vec<bool>> {
    let g = KinGains {
        psi: 0.1,
        eps: 0.1,
        ..Default::default()
    };
    theta_grid
        .iter()
        .map(|&th| {
            y_grid
                .iter()
                .map(|&y| {
                    let inp = KinInputs {
                        y_e: y,
                        theta_bar_e: th,
                        vbar,
                        c,
                        ..Default::default()
                    };
                    let cmd = yaw_command(&inp, &g, KinMode::Prop, f64::INFINITY);
                    implied_steering_rate(cmd.r_kin, cmd.r_dot, vbar, wheelbase).abs() <= omega_max
                })
                .collect()
        })
        .collect()
}

/// Ẇ = S·Ṡ on the slice `y_e = σ_k = 0`, `θ̄_e = S` of the closed
/// kinematic loop on a straight path.
pub fn lyapunov_rate_slice(g: &KinGains, c: f64, vbar: f64, s: f64) -> f64 {
    let inp = KinInputs {
        theta_bar_e: s,
        vbar,
        c,
        ..Default::default()
    };
    let cmd = yaw_command(&inp, g, KinMode::Prop, f64::INFINITY);
    // Ṡ = θ̄̇ + d/dt asin(c y/v̄ + K σ/v̄) with ẏ = v̄ sin θ̄
    let s_dot = -cmd.r_kin + c * vbar * s.sin() / vbar;
    s * s_dot
}

/// Closed-loop kinematic field over `(σ_k, y_e, θ̄_e)` on a straight path.
pub fn closed_loop_field(g: &KinGains, c: f64, vbar: f64, x: [f64; 3]) -> [f64; 3] {
    let inp = KinInputs {
        sigma_k: x[0],
        y_e: x[1],
        theta_bar_e: x[2],
        vbar,
        c,
        ..Default::default()
    };
    let cmd = yaw_command(&inp, g, KinMode::Prop, f64::INFINITY);
    [x[1], vbar * x[2].sin(), -cmd.r_kin]
}

/// Analytic Jacobian of the closed kinematic loop at the origin (constant c).
pub fn manifold_jacobian(g: &KinGains, c: f64, vbar: f64) -> [[f64; 3]; 3] {
    let k = g.psi / g.eps;
    [
        [0.0, 1.0, 0.0],
        [0.0, 0.0, vbar],
        [-k * g.k_i / vbar, -k * c / vbar, -k],
    ]
}
