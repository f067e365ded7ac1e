//! Stability checks, gain-selection studies and the data behind the
//! analysis figures.

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dynamic::{steering_rate, DynCtlState, DynGains, DynInputs};
use crate::integrate::rk4_step;
use crate::kinematic::{
    closed_loop_field, lyapunov_rate_slice, manifold_jacobian, steering_saturation_region, C0Mode,
    KinGains,
};
use crate::observer::{hgo_deriv, HgoConfig, HgoState};
use crate::path::SegmentSpec;
use crate::plot::{panels, GridChart, LineChart, Series};
use crate::sim::{
    run_partial, ControllerKind, Disturbances, InitialConfig, PathConfig, Scenario, SimTrace,
    SpeedConfig,
};
use crate::vehicle::{
    dyn_coeffs, kappa_max, linear_slip_yaw_deriv, sideslip_perturbation, steady_sideslip,
    PlantState, VehicleParams, OMEGA_MAX,
};
use crate::{Result, SteerError};

/// Eigenvalues `(re, im)` of the closed kinematic loop at the origin, sorted
/// by real part then imaginary part.
pub fn jacobian_eigenvalues(g: &KinGains, c: f64, vbar: f64) -> Vec<(f64, f64)> {
    let a = manifold_jacobian(g, c, vbar);
    let m = Matrix3::from_fn(|i, j| a[i][j]);
    let mut e: Vec<(f64, f64)> = m
        .complex_eigenvalues()
        .iter()
        .map(|z| (z.re, z.im))
        .collect();
    e.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.total_cmp(&q.1)));
    e
}

/// `(S, Ẇ)` on `n` points per side of `S ∈ [−span, span] \ {0}`.
pub fn lyapunov_kin_grid(g: &KinGains, c: f64, vbar: f64, span: f64, n: usize) -> Vec<(f64, f64)> {
    (1..=n)
        .rev()
        .map(|k| -span * k as f64 / n as f64)
        .chain((1..=n).map(|k| span * k as f64 / n as f64))
        .map(|s| (s, lyapunov_rate_slice(g, c, vbar, s)))
        .collect()
}

/// 98 % (or `1 − frac`) settling time: the last sample time at which
/// `|y| > frac·|y0|`; zero if the signal never leaves the band.
pub fn settling_time(t: &[f64], y: &[f64], y0: f64, frac: f64) -> f64 {
    let band = frac * y0.abs();
    t.iter()
        .zip(y)
        .filter(|(_, y)| y.abs() > band)
        .map(|(t, _)| *t)
        .fold(0.0, f64::max)
}

/// Settling of `y_e` for the kinematic tier alone (yaw rate tracked
/// exactly) on a straight path from a lateral step `y0`.
pub fn kinematic_settling_time(g: &KinGains, c: f64, vbar: f64, y0: f64, horizon: f64) -> f64 {
    let h = 1e-3;
    let n = (horizon / h).round() as usize;
    let mut x = [0.0, y0, 0.0];
    let mut f = |_t: f64, x: &[f64; 3]| closed_loop_field(g, c, vbar, *x);
    let mut last = 0.0;
    for k in 0..n {
        x = rk4_step(&mut f, k as f64 * h, &x, h);
        if x[1].abs() > 0.02 * y0.abs() {
            last = (k + 1) as f64 * h;
        }
    }
    last
}

/// Gains of the settling-law check: a thin boundary layer so the manifold
/// is reached much faster than `c`, and a weak integrator.
pub fn settling_law_gains() -> KinGains {
    KinGains {
        eps: 0.01,
        k_i: 0.01,
        safety_cap: false,
        steer_rate_cap: false,
        ..Default::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SettlingRow {
    pub c: f64,
    pub settling: f64,
    pub predicted: f64,
    pub ratio: f64,
}

pub fn settling_law_study(cs: &[f64], vbar: f64, y0: f64) -> Vec<SettlingRow> {
    let g = settling_law_gains();
    cs.iter()
        .map(|&c| {
            let ts = kinematic_settling_time(&g, c, vbar, y0, 60.0);
            let pred = 4.0 / c;
            SettlingRow {
                c,
                settling: ts,
                predicted: pred,
                ratio: ts / pred,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DynLoopTrace {
    /// Composite energy at every step, starting at `t = 0`.
    pub energy: Vec<f64>,
    pub r_e: Vec<f64>,
    /// Some sample hit the steering-angle or rate limit.
    pub saturated: bool,
}

/// The linear plant under the dynamic tier with exact state feedback. The
/// yaw reference is `amp·sin(w t + phase) + offset`; the state is
/// `(β, r, φ, σ_r, σ_φ)`; `delta_r` is an unmodelled constant on `ṙ`.
#[allow(clippy::too_many_arguments)]
pub fn dynamic_loop_trace(
    p: &VehicleParams,
    v: f64,
    g: &DynGains,
    x0: [f64; 5],
    reference: (f64, f64, f64, f64),
    delta_r: f64,
    h: f64,
    steps: usize,
) -> DynLoopTrace {
    let c = dyn_coeffs(p, v);
    let (amp, w, ph, offset) = reference;
    let eval = |t: f64, x: &[f64; 5]| {
        let (rk, rkd, rkdd) = (
            amp * (w * t + ph).sin() + offset,
            amp * w * (w * t + ph).cos(),
            -amp * w * w * (w * t + ph).sin(),
        );
        let s = PlantState {
            beta: x[0],
            r: x[1],
            phi: x[2],
            ..Default::default()
        };
        let (bd, rd) = linear_slip_yaw_deriv(&s, &c, (0.0, delta_r));
        let st = DynCtlState {
            sigma_r: x[3],
            sigma_phi: x[4],
            ..Default::default()
        };
        let out = steering_rate(
            &DynInputs {
                beta_hat: x[0],
                beta_hat_dot: bd,
                r_hat: x[1],
                phi_act: x[2],
                r_kin: rk,
                r_kin_dot: rkd,
                r_kin_ddot: rkdd,
            },
            &st,
            &c,
            g,
        );
        (out, [bd, rd, out.omega_raw, out.r_e, out.phi_e])
    };
    let mut tr = DynLoopTrace {
        energy: Vec::with_capacity(steps + 1),
        r_e: Vec::with_capacity(steps + 1),
        saturated: false,
    };
    let log = |t: f64, x: &[f64; 5], tr: &mut DynLoopTrace| {
        let (out, _) = eval(t, x);
        tr.saturated |= out.phi_saturated || out.omega_saturated;
        tr.energy
            .push(g.composite_energy(c.b21, out.r_e, x[3], out.phi_e, x[4]));
        tr.r_e.push(out.r_e);
    };
    let mut f = |t: f64, x: &[f64; 5]| eval(t, x).1;
    let mut x = x0;
    log(0.0, &x, &mut tr);
    for k in 0..steps {
        let t = k as f64 * h;
        x = rk4_step(&mut f, t, &x, h);
        log(t + h, &x, &mut tr);
    }
    tr
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergySuite {
    pub trajectories: usize,
    /// Largest single-step increase of the composite energy.
    pub max_increase: f64,
    /// Largest ratio of final to initial energy.
    pub max_final_ratio: f64,
    /// No trajectory touched the steering-angle or rate limit.
    pub unsaturated: bool,
}

/// Random small initial conditions and references on the linear plant,
/// 10 s each at a 1 ms step.
pub fn dynamic_energy_suite(
    p: &VehicleParams,
    v: f64,
    g: &DynGains,
    n: usize,
    seed: u64,
) -> EnergySuite {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cases: Vec<([f64; 5], (f64, f64, f64))> = (0..n)
        .map(|_| {
            let mut x = [0.0; 5];
            for xi in x.iter_mut() {
                *xi = rng.random_range(-0.01..0.01);
            }
            let r = (
                rng.random_range(0.0..0.02),
                rng.random_range(0.1..1.0),
                rng.random_range(0.0..std::f64::consts::TAU),
            );
            (x, r)
        })
        .collect();
    let res: Vec<(f64, f64, bool)> = cases
        .par_iter()
        .map(|(x0, r)| {
            let tr = dynamic_loop_trace(p, v, g, *x0, (r.0, r.1, r.2, 0.0), 0.0, 1e-3, 10_000);
            let (w, sat) = (tr.energy, tr.saturated);
            let inc = w
                .windows(2)
                .map(|k| k[1] - k[0])
                .fold(f64::NEG_INFINITY, f64::max);
            (inc, w[w.len() - 1] / w[0], !sat)
        })
        .collect();
    EnergySuite {
        trajectories: n,
        max_increase: res.iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max),
        max_final_ratio: res.iter().map(|r| r.1).fold(0.0, f64::max),
        unsaturated: res.iter().all(|r| r.2),
    }
}

/// Steady `|β̃|` of the observer on the linear plant under a constant
/// sideslip disturbance, by simulation.
pub fn hgo_steady_beta_error(p: &VehicleParams, v: f64, cfg: &HgoConfig, delta_beta: f64) -> f64 {
    let c = dyn_coeffs(p, v);
    let dt = cfg.max_step(&c);
    let mut f = |_t: f64, s: &[f64; 4]| {
        let (bd, rd) = linear_slip_yaw_deriv(
            &PlantState {
                beta: s[0],
                r: s[1],
                ..Default::default()
            },
            &c,
            (delta_beta, 0.0),
        );
        let (rh, bh) = hgo_deriv(
            &HgoState {
                r_hat: s[3],
                beta_hat: s[2],
            },
            s[1],
            0.0,
            &c,
            cfg,
        );
        [bd, rd, bh, rh]
    };
    let mut x = [0.0; 4];
    let n = (20.0 / dt).ceil() as usize;
    for k in 0..n {
        x = rk4_step(&mut f, k as f64 * dt, &x, dt);
    }
    (x[0] - x[2]).abs()
}

/// Eigenvalues of the ε-scaled observer error matrix, from its trace and
/// discriminant. The default design has a double pole, where an iterative
/// eigensolver loses about half the digits.
pub fn hgo_scaled_eigenvalues(cfg: &HgoConfig) -> Vec<(f64, f64)> {
    let [[a, b], [c, d]] = cfg.scaled_error_matrix();
    let half_tr = (a + d) / 2.0;
    let disc = ((a - d) * (a - d) + 4.0 * b * c) / 4.0;
    let mut e = if disc >= 0.0 {
        let s = disc.sqrt();
        vec![(half_tr - s, 0.0), (half_tr + s, 0.0)]
    } else {
        let s = (-disc).sqrt();
        vec![(half_tr, -s), (half_tr, s)]
    };
    e.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.total_cmp(&q.1)));
    e
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlipRow {
    pub v: f64,
    pub kappa_max: f64,
    pub beta: f64,
    pub alpha_r: f64,
    pub delta_ar: f64,
    /// `α_r/β` in steady cornering.
    pub coefficient: f64,
}

/// Steady-cornering slip quantities at the comfort-limited curvature.
pub fn slip_curve(p: &VehicleParams, speeds: &[f64]) -> Vec<SlipRow> {
    speeds
        .iter()
        .map(|&v| {
            let k = kappa_max(v);
            let beta = steady_sideslip(k, p, v);
            let d = sideslip_perturbation(k, p, v);
            let alpha_r = d - beta;
            SlipRow {
                v,
                kappa_max: k,
                beta,
                alpha_r,
                delta_ar: d,
                coefficient: if beta != 0.0 {
                    alpha_r / beta
                } else {
                    f64::NAN
                },
            }
        })
        .collect()
}

/// Sign changes of `δ_ar` along a slip curve, located by linear
/// interpolation.
pub fn delta_ar_roots(rows: &[SlipRow]) -> Vec<f64> {
    rows.windows(2)
        .filter(|w| w[0].delta_ar != 0.0 && w[0].delta_ar.signum() != w[1].delta_ar.signum())
        .map(|w| {
            let (a, b) = (&w[0], &w[1]);
            a.v - a.delta_ar * (b.v - a.v) / (b.delta_ar - a.delta_ar)
        })
        .collect()
}

/// Straight-line scenario at constant speed with a constant `c`.
pub fn straight_line_scenario(
    kind: ControllerKind,
    v: f64,
    y0: f64,
    c: f64,
    duration: f64,
) -> Scenario {
    let mut sc = Scenario::new(
        PathConfig {
            preset: None,
            segments: Some(vec![SegmentSpec::line(v.max(1.0) * duration + 50.0)]),
        },
        kind,
    );
    sc.speed = SpeedConfig::constant(v);
    sc.initial = InitialConfig {
        y_e: y0,
        theta_e: 0.0,
    };
    sc.disturbances = Disturbances::none();
    sc.run.duration = Some(duration);
    let k = &mut sc.controller.kin;
    k.c0 = c;
    k.c_ss = c;
    k.t_end = 0.0;
    k.k_i = k.k_i.min(c / 10.0);
    k.safety_cap = false;
    k.steer_rate_cap = false;
    sc.controller.dyn_tuning.speed_max = sc.controller.dyn_tuning.speed_max.max(v);
    sc
}

/// Peak lateral-acceleration deviation, overshoot and steering-rate demand
/// of a constant-`c` run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResponseSummary {
    pub completed: bool,
    pub peak_accel: f64,
    /// Largest excursion past the path as a fraction of `|y0|`.
    pub overshoot: f64,
    pub peak_rate_demand: f64,
    pub settling: f64,
}

pub fn summarize_response(tr: &SimTrace, y0: f64, completed: bool) -> ResponseSummary {
    let mut s = ResponseSummary {
        completed,
        peak_accel: 0.0,
        overshoot: 0.0,
        peak_rate_demand: 0.0,
        settling: 0.0,
    };
    for r in &tr.rows {
        s.peak_accel = s.peak_accel.max((r.a_lat - r.a_ref).abs());
        s.peak_rate_demand = s.peak_rate_demand.max(r.omega_raw.abs());
        if r.y_e * y0.signum() < 0.0 {
            s.overshoot = s.overshoot.max(r.y_e.abs() / y0.abs());
        }
    }
    let t: Vec<f64> = tr.rows.iter().map(|r| r.t).collect();
    let y: Vec<f64> = tr.rows.iter().map(|r| r.y_e).collect();
    s.settling = settling_time(&t, &y, y0, 0.02);
    s
}

/// Gracefulness rule of the constant-`c` study: not aborted, and peak
/// lateral acceleration, steering-rate demand and overshoot no larger than
/// the limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GracefulRule {
    pub accel_limit: f64,
    pub rate_limit: f64,
    pub overshoot_limit: f64,
}

impl GracefulRule {
    pub fn accepts(&self, s: &ResponseSummary) -> bool {
        let tol = 1.0 + 1e-9;
        s.completed
            && s.peak_rate_demand <= self.rate_limit * tol
            && s.overshoot <= self.overshoot_limit * tol
            && s.peak_accel <= self.accel_limit * tol
    }
}

pub const C_STUDY_GRID: [f64; 16] = [
    0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0, 5.5, 6.0,
];

fn response(v: f64, y0: f64, c: f64) -> ResponseSummary {
    let duration = (4.0 * 4.0 / c).clamp(10.0, 40.0);
    let sc = straight_line_scenario(ControllerKind::Prop, v, y0, c, duration);
    match run_partial(&sc) {
        Ok((tr, err)) => summarize_response(&tr, y0, err.is_none()),
        Err(_) => ResponseSummary {
            completed: false,
            peak_accel: f64::INFINITY,
            overshoot: f64::INFINITY,
            peak_rate_demand: f64::INFINITY,
            settling: f64::INFINITY,
        },
    }
}

/// The rule calibrated on `c = 3` for a 0.25 m offset at 10 m/s: its peak
/// acceleration, and the actuator rate limit (or its demand if higher).
pub fn reference_rule() -> GracefulRule {
    let s = response(10.0, 0.25, 3.0);
    GracefulRule {
        accel_limit: s.peak_accel,
        rate_limit: s.peak_rate_demand.max(OMEGA_MAX),
        overshoot_limit: f64::INFINITY,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CStudyRow {
    pub v: f64,
    pub y0: f64,
    /// Largest grid value the rule accepts (0 if none).
    pub c: f64,
}

pub fn c_selection_study(speeds: &[f64], offsets: &[f64], rule: &GracefulRule) -> Vec<CStudyRow> {
    let jobs: Vec<(f64, f64, f64)> = speeds
        .iter()
        .flat_map(|&v| {
            offsets
                .iter()
                .flat_map(move |&y| C_STUDY_GRID.iter().map(move |&c| (v, y, c)))
        })
        .collect();
    let ok: Vec<bool> = jobs
        .par_iter()
        .map(|&(v, y, c)| rule.accepts(&response(v, y, c)))
        .collect();
    let mut rows = Vec::new();
    for &v in speeds {
        for &y in offsets {
            let best = jobs
                .iter()
                .zip(&ok)
                .filter(|((jv, jy, _), ok)| *jv == v && *jy == y && **ok)
                .map(|((_, _, c), _)| *c)
                .fold(0.0, f64::max);
            rows.push(CStudyRow { v, y0: y, c: best });
        }
    }
    rows
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FigureName {
    Fig4,
    Fig5,
    Fig6,
    Fig7,
    Fig8,
    Fig13,
}

impl FigureName {
    pub const ALL: [FigureName; 6] = [
        FigureName::Fig4,
        FigureName::Fig5,
        FigureName::Fig6,
        FigureName::Fig7,
        FigureName::Fig8,
        FigureName::Fig13,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "fig4" => FigureName::Fig4,
            "fig5" => FigureName::Fig5,
            "fig6" => FigureName::Fig6,
            "fig7" => FigureName::Fig7,
            "fig8" => FigureName::Fig8,
            "fig13" => FigureName::Fig13,
            other => {
                return Err(SteerError::Config(format!(
                    "unknown figure `{other}` (fig4, fig5, fig6, fig7, fig8, fig13)"
                )))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            FigureName::Fig4 => "fig4",
            FigureName::Fig5 => "fig5",
            FigureName::Fig6 => "fig6",
            FigureName::Fig7 => "fig7",
            FigureName::Fig8 => "fig8",
            FigureName::Fig13 => "fig13",
        }
    }
}

/// Tabular data plus a rendered chart.
#[derive(Debug, Clone, PartialEq)]
pub struct Figure {
    pub name: &'static str,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<f64>>,
    pub svg: String,
}

impl Figure {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory csv");
        for r in &self.rows {
            w.write_record(r.iter().map(|x| x.to_string()))
                .expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}

pub fn figure(which: FigureName) -> Result<Figure> {
    match which {
        FigureName::Fig4 => Ok(fig4()),
        FigureName::Fig5 => Ok(fig5()),
        FigureName::Fig6 => fig6(),
        FigureName::Fig7 => Ok(fig7()),
        FigureName::Fig8 => fig8(),
        FigureName::Fig13 => Ok(fig13()),
    }
}

fn fig4() -> Figure {
    let speeds: Vec<f64> = (1..=200).map(|k| k as f64 * 0.1).collect();
    let rows = slip_curve(&VehicleParams::perturbed(), &speeds);
    let pick = |f: fn(&SlipRow) -> f64| rows.iter().map(|r| (r.v, f(r))).collect::<Vec<_>>();
    let slip = LineChart::new("Steady slip at comfort-limited curvature", "v (m/s)", "rad")
        .with(Series::new("beta", pick(|r| r.beta)))
        .with(Series::new("alpha_r", pick(|r| r.alpha_r)));
    let mut delta = LineChart::new("Slip perturbation", "v (m/s)", "delta_ar (rad)")
        .with(Series::new("delta_ar", pick(|r| r.delta_ar)));
    delta.h_lines.push(0.0);
    let kappa = LineChart::new("Allowable curvature", "v (m/s)", "kappa (1/m)")
        .with(Series::new("kappa_max", pick(|r| r.kappa_max)));
    let coef = LineChart::new("alpha_r / beta", "v (m/s)", "")
        .with(Series::new("coefficient", pick(|r| r.coefficient)));
    Figure {
        name: "fig4",
        header: vec![
            "v",
            "kappa_max",
            "beta",
            "alpha_r",
            "delta_ar",
            "coefficient",
        ],
        rows: rows
            .iter()
            .map(|r| {
                vec![
                    r.v,
                    r.kappa_max,
                    r.beta,
                    r.alpha_r,
                    r.delta_ar,
                    r.coefficient,
                ]
            })
            .collect(),
        svg: panels(
            &[slip.to_svg(), delta.to_svg(), kappa.to_svg(), coef.to_svg()],
            2,
        ),
    }
}

fn fig5() -> Figure {
    let ys: Vec<f64> = (0..=40).map(|k| -2.0 + 0.1 * k as f64).collect();
    let ths: Vec<f64> = (0..=40).map(|k| -0.6 + 0.03 * k as f64).collect();
    let wheelbase = VehicleParams::nominal().wheelbase();
    let mut rows = Vec::new();
    let mut docs = Vec::new();
    for v in [2.0, 5.0, 10.0] {
        for c in [1.0, 2.0, 3.0] {
            let grid = steering_saturation_region(c, v, wheelbase, OMEGA_MAX, &ys, &ths);
            for (i, th) in ths.iter().enumerate() {
                for (j, y) in ys.iter().enumerate() {
                    rows.push(vec![v, c, *y, *th, grid[i][j] as u8 as f64]);
                }
            }
            docs.push(
                GridChart {
                    title: format!("v = {v} m/s, c = {c}"),
                    x_label: "y_e (m)".into(),
                    y_label: "theta_e (rad)".into(),
                    xs: ys.clone(),
                    ys: ths.clone(),
                    cells: grid,
                }
                .to_svg(),
            );
        }
    }
    Figure {
        name: "fig5",
        header: vec!["v", "c", "y_e", "theta_e", "unsaturated"],
        rows,
        svg: panels(&docs, 3),
    }
}

fn fig6() -> Result<Figure> {
    let mut cases: Vec<(u8, f64, f64)> =
        [1.0, 2.0, 3.0, 4.0].iter().map(|&c| (1, c, 0.25)).collect();
    cases.extend([0.25, 0.5, 1.0, 1.5].iter().map(|&y| (2u8, 2.0, y)));
    let traces: Vec<Result<SimTrace>> = cases
        .par_iter()
        .map(|&(_, c, y0)| {
            let (tr, _) = run_partial(&straight_line_scenario(
                ControllerKind::Prop,
                10.0,
                y0,
                c,
                15.0,
            ))?;
            Ok(tr)
        })
        .collect();
    let mut rows = Vec::new();
    let mut charts = [
        LineChart::new("Constant c, y0 = 0.25 m", "t (s)", "y_e (m)"),
        LineChart::new("Constant c, y0 = 0.25 m", "t (s)", "a_lat (m/s^2)"),
        LineChart::new("c = 2, varying y0", "t (s)", "y_e (m)"),
        LineChart::new("c = 2, varying y0", "t (s)", "a_lat (m/s^2)"),
    ];
    for ((row, c, y0), tr) in cases.iter().zip(traces) {
        let tr = tr?;
        let label = if *row == 1 {
            format!("c = {c}")
        } else {
            format!("y0 = {y0}")
        };
        let base = 2 * (*row as usize - 1);
        charts[base].series.push(Series::new(
            &label,
            tr.rows.iter().map(|r| (r.t, r.y_e)).collect(),
        ));
        charts[base + 1].series.push(Series::new(
            &label,
            tr.rows.iter().map(|r| (r.t, r.a_lat)).collect(),
        ));
        rows.extend(
            tr.rows
                .iter()
                .map(|r| vec![*row as f64, *c, *y0, r.t, r.y_e, r.a_lat]),
        );
    }
    Ok(Figure {
        name: "fig6",
        header: vec!["row", "c", "y0", "t", "y_e", "a_lat"],
        rows,
        svg: panels(&charts.iter().map(|c| c.to_svg()).collect::<Vec<_>>(), 2),
    })
}

pub const C_STUDY_SPEEDS: [f64; 11] = [1.0, 2.0, 3.0, 5.0, 7.0, 10.0, 15.0, 20.0, 25.0, 30.0, 40.0];
pub const C_STUDY_OFFSETS: [f64; 4] = [0.1, 0.25, 0.5, 1.0];

fn fig7() -> Figure {
    let rule = reference_rule();
    let rows = c_selection_study(&C_STUDY_SPEEDS, &C_STUDY_OFFSETS, &rule);
    let mut chart = LineChart::new("Largest graceful constant c", "v (m/s)", "c");
    for &y in &C_STUDY_OFFSETS {
        chart.series.push(Series::new(
            format!("y0 = {y} m"),
            rows.iter()
                .filter(|r| r.y0 == y)
                .map(|r| (r.v, r.c))
                .collect(),
        ));
    }
    Figure {
        name: "fig7",
        header: vec!["v", "y0", "c"],
        rows: rows.iter().map(|r| vec![r.v, r.y0, r.c]).collect(),
        svg: chart.to_svg(),
    }
}

fn fig8() -> Result<Figure> {
    let postures = [(1.0, 0.2), (1.0, -0.2)];
    let mut jobs = Vec::new();
    for (row, mode) in [(1u8, C0Mode::Fixed), (2u8, C0Mode::Manifold)] {
        for (k, &(y, th)) in postures.iter().enumerate() {
            let mut sc = Scenario::new(
                PathConfig {
                    preset: None,
                    segments: Some(vec![SegmentSpec::line(250.0)]),
                },
                ControllerKind::Prop,
            );
            sc.initial = InitialConfig {
                y_e: y,
                theta_e: th,
            };
            sc.disturbances = Disturbances::none();
            sc.run.duration = Some(20.0);
            sc.controller.kin.c0_mode = mode;
            jobs.push((row, k, sc));
        }
    }
    let traces: Vec<Result<SimTrace>> = jobs
        .par_iter()
        .map(|(_, _, sc)| Ok(run_partial(sc)?.0))
        .collect();
    let mut charts = [
        LineChart::new("Fixed c0: phase portrait", "y_e (m)", "theta_bar_e (rad)"),
        LineChart::new("Fixed c0: lateral acceleration", "t (s)", "a_lat (m/s^2)"),
        LineChart::new(
            "Posture-based c0: phase portrait",
            "y_e (m)",
            "theta_bar_e (rad)",
        ),
        LineChart::new(
            "Posture-based c0: lateral acceleration",
            "t (s)",
            "a_lat (m/s^2)",
        ),
    ];
    let mut rows = Vec::new();
    for ((row, k, _), tr) in jobs.iter().zip(traces) {
        let tr = tr?;
        let label = if *k == 0 {
            "same sign"
        } else {
            "opposite sign"
        };
        let base = 2 * (*row as usize - 1);
        charts[base].series.push(Series::new(
            label,
            tr.rows.iter().map(|r| (r.y_e, r.theta_bar_e)).collect(),
        ));
        charts[base + 1].series.push(Series::new(
            label,
            tr.rows.iter().map(|r| (r.t, r.a_lat)).collect(),
        ));
        rows.extend(tr.rows.iter().map(|r| {
            vec![
                *row as f64,
                *k as f64,
                r.t,
                r.y_e,
                r.theta_bar_e,
                r.a_lat,
                r.c,
            ]
        }));
    }
    Ok(Figure {
        name: "fig8",
        header: vec!["row", "posture", "t", "y_e", "theta_bar_e", "a_lat", "c"],
        rows,
        svg: panels(&charts.iter().map(|c| c.to_svg()).collect::<Vec<_>>(), 2),
    })
}

fn fig13() -> Figure {
    let g = KinGains::stability_study();
    let grid = lyapunov_kin_grid(&g, 0.65, 10.0, 1.0, 200);
    let epss = [0.05, 0.1, 0.2];
    let mut top = LineChart::new(
        "Lyapunov rate on the boundary-layer slice",
        "S_kin",
        "dW/dt",
    )
    .with(Series::new("dW/dt", grid.clone()));
    top.h_lines.push(0.0);
    let mut bottom = LineChart::new("tanh(S/eps) and its linearisation", "S_kin", "");
    for &e in &epss {
        bottom.series.push(Series::new(
            format!("tanh, eps = {e}"),
            grid.iter().map(|(s, _)| (*s, (s / e).tanh())).collect(),
        ));
    }
    for &e in &epss {
        bottom.series.push(Series::new(
            format!("S/eps, eps = {e}"),
            grid.iter()
                .filter(|(s, _)| (s / e).abs() <= 1.5)
                .map(|(s, _)| (*s, s / e))
                .collect(),
        ));
    }
    Figure {
        name: "fig13",
        header: vec![
            "s_kin",
            "w_dot",
            "tanh_eps_0.05",
            "tanh_eps_0.1",
            "tanh_eps_0.2",
        ],
        rows: grid
            .iter()
            .map(|&(s, w)| {
                let mut r = vec![s, w];
                r.extend(epss.iter().map(|e| (s / e).tanh()));
                r
            })
            .collect(),
        svg: panels(&[top.to_svg(), bottom.to_svg()], 1),
    }
}
