//! Fixed-step closed-loop simulation.
//!
//! Per control period: reference/error update → `c(t)` schedule → kinematic
//! tier → dynamic tier → rate clamp → RK4 plant substeps → yaw-rate sensor →
//! observer substeps (inputs held first-order across the period).

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    baseline_a_step, baseline_b_dynamic, baseline_b_kinematic, tune_baseline_a, BaselineAGains,
    BaselineAState, BaselineATuning,
};
use crate::dynamic::{steering_rate, tune_dyn_gains, DynCtlState, DynGains, DynInputs, DynTuning};
use crate::error_model::{
    compensated_heading, initial_reference, update_reference, AxlePose, ErrorState,
};
use crate::integrate::rk4_substeps;
use crate::kinematic::{
    initial_c0, r_threshold, rate_feasible_c, schedule_c, yaw_command, KinGains, KinInputs, KinMode,
};
use crate::metrics::MetricsConfig;
use crate::observer::{hgo_advance, hgo_deriv, HgoConfig, HgoState};
use crate::path::{build_path, comprehensive_specs, l_path_specs, s_path_specs, Path, SegmentSpec};
use crate::vehicle::{
    dyn_coeffs, lateral_accel, nonlinear_truth_deriv, sideslip_perturbation, slope_force,
    PlantInput, PlantState, VehicleParams, OMEGA_MAX, PHI_MAX,
};
use crate::{Result, SteerError, GRAVITY};

pub const DT_MAX: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ControllerKind {
    A,
    B,
    #[serde(rename = "PROP")]
    Prop,
    #[serde(rename = "PROP-S")]
    PropS,
}

impl ControllerKind {
    pub fn name(&self) -> &'static str {
        match self {
            ControllerKind::A => "A",
            ControllerKind::B => "B",
            ControllerKind::Prop => "PROP",
            ControllerKind::PropS => "PROP-S",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "A" => Ok(ControllerKind::A),
            "B" => Ok(ControllerKind::B),
            "PROP" => Ok(ControllerKind::Prop),
            "PROP-S" | "PROPS" | "PROP_S" => Ok(ControllerKind::PropS),
            _ => Err(SteerError::Config(format!(
                "unknown controller `{s}` (expected A, B, PROP or PROP-S)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Weather {
    #[default]
    Clear,
    Rainy,
}

impl Weather {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "clear" => Ok(Weather::Clear),
            "rainy" => Ok(Weather::Rainy),
            _ => Err(SteerError::Config(format!(
                "unknown preset `{s}` (expected clear or rainy)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dt: f64,
    /// Stop after this long; `None` runs to the path end.
    pub duration: Option<f64>,
    /// Hard stop when running to the path end.
    pub max_time: f64,
    pub seed: u64,
    /// Plant RK4 substeps per control period; chosen from the plant
    /// stiffness when absent.
    pub substeps: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dt: 0.01,
            duration: None,
            max_time: 600.0,
            seed: 0,
            substeps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PathConfig {
    /// `l`, `s` or `comprehensive`.
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub segments: Option<Vec<SegmentSpec>>,
}

impl PathConfig {
    pub fn preset(name: &str) -> Self {
        PathConfig {
            preset: Some(name.into()),
            segments: None,
        }
    }

    pub fn specs(&self) -> Result<Vec<SegmentSpec>> {
        match (&self.preset, &self.segments) {
            (Some(_), Some(_)) => Err(SteerError::Config(
                "path: give either `preset` or `segments`, not both".into(),
            )),
            (None, Some(s)) => Ok(s.clone()),
            (Some(p), None) => match p.as_str() {
                "l" | "L" => Ok(l_path_specs()),
                "s" | "S" => Ok(s_path_specs()),
                "comprehensive" => Ok(comprehensive_specs()),
                other => Err(SteerError::Config(format!(
                    "path: unknown preset `{other}`"
                ))),
            },
            (None, None) => Err(SteerError::Config(
                "path: missing field `preset` or `segments`".into(),
            )),
        }
    }
}

fn named_params(name: &str) -> Result<VehicleParams> {
    match name {
        "nominal" => Ok(VehicleParams::nominal()),
        "perturbed" => Ok(VehicleParams::perturbed()),
        other => Err(SteerError::Config(format!(
            "vehicle: unknown parameter set `{other}`"
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleConfig {
    /// Named truth parameter set, overridden by `truth_params`.
    pub truth: String,
    pub truth_params: Option<VehicleParams>,
    /// Controller's belief.
    pub model: String,
    pub model_params: Option<VehicleParams>,
    pub preset: Weather,
}

impl Default for VehicleConfig {
    fn default() -> Self {
        VehicleConfig {
            truth: "perturbed".into(),
            truth_params: None,
            model: "nominal".into(),
            model_params: None,
            preset: Weather::Clear,
        }
    }
}

impl VehicleConfig {
    /// `(truth, model)`. Rain degrades the truth tires; the controller keeps
    /// its stiffness belief but is told the road friction.
    pub fn resolve(&self) -> Result<(VehicleParams, VehicleParams)> {
        let mut truth = match self.truth_params {
            Some(p) => p,
            None => named_params(&self.truth)?,
        };
        let model = match self.model_params {
            Some(p) => p,
            None => named_params(&self.model)?,
        };
        if self.preset == Weather::Rainy {
            truth = truth.rainy();
        }
        truth.validate()?;
        model.validate()?;
        Ok((truth, model))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    pub kind: ControllerKind,
    #[serde(default)]
    pub kin: KinGains,
    #[serde(default)]
    pub dyn_tuning: DynTuning,
    /// Explicit dynamic gains; tuned from `dyn_tuning` when absent.
    #[serde(default)]
    pub dyn_gains: Option<DynGains>,
    #[serde(default)]
    pub hgo: HgoConfig,
    #[serde(default)]
    pub a_tuning: BaselineATuning,
    #[serde(default)]
    pub a_gains: Option<BaselineAGains>,
}

impl ControllerConfig {
    pub fn new(kind: ControllerKind) -> Self {
        ControllerConfig {
            kind,
            kin: KinGains::default(),
            dyn_tuning: DynTuning::default(),
            dyn_gains: None,
            hgo: HgoConfig::default(),
            a_tuning: BaselineATuning::default(),
            a_gains: None,
        }
    }
}

/// Piecewise-linear speed schedule `(t, v)`, held after the last knot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpeedConfig {
    pub v_ss: f64,
    pub ramp: f64,
    pub knots: Option<Vec<[f64; 2]>>,
}

impl Default for SpeedConfig {
    fn default() -> Self {
        SpeedConfig {
            v_ss: 10.0,
            ramp: 5.0,
            knots: None,
        }
    }
}

impl SpeedConfig {
    pub fn constant(v: f64) -> Self {
        SpeedConfig {
            v_ss: v,
            ramp: 0.0,
            knots: None,
        }
    }

    /// Varying 8–10 m/s profile used on the comprehensive path.
    pub fn varying() -> Self {
        SpeedConfig {
            knots: Some(vec![
                [0.0, 0.0],
                [5.0, 9.0],
                [15.0, 10.0],
                [30.0, 8.0],
                [45.0, 10.0],
                [60.0, 9.0],
            ]),
            ..Default::default()
        }
    }

    pub fn profile(&self) -> Result<SpeedProfile> {
        let knots: Vec<(f64, f64)> = match &self.knots {
            Some(k) => k.iter().map(|k| (k[0], k[1])).collect(),
            None if self.ramp > 0.0 => vec![(0.0, 0.0), (self.ramp, self.v_ss)],
            None => vec![(0.0, self.v_ss)],
        };
        SpeedProfile::new(knots)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeedProfile {
    knots: Vec<(f64, f64)>,
}

impl SpeedProfile {
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.is_empty() {
            return Err(SteerError::Config("speed: no knots".into()));
        }
        if knots[0].0 != 0.0 {
            return Err(SteerError::Config(
                "speed: first knot must be at t = 0".into(),
            ));
        }
        if knots.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(SteerError::Config("speed: knot times must increase".into()));
        }
        if knots.iter().any(|k| !(k.1 >= 0.0 && k.1 <= 40.0)) {
            return Err(SteerError::Config(
                "speed: values must lie in [0, 40] m/s".into(),
            ));
        }
        Ok(SpeedProfile { knots })
    }

    /// `(v, v̇)`; the derivative is the right-sided slope.
    pub fn eval(&self, t: f64) -> (f64, f64) {
        let k = &self.knots;
        if t < k[0].0 {
            return (k[0].1, 0.0);
        }
        for w in k.windows(2) {
            let (t0, v0) = w[0];
            let (t1, v1) = w[1];
            if t < t1 {
                let slope = (v1 - v0) / (t1 - t0);
                return (v0 + slope * (t - t0), slope);
            }
        }
        (k[k.len() - 1].1, 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct InitialConfig {
    pub y_e: f64,
    pub theta_e: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LateralStep {
    pub t: f64,
    /// Displacement along the vehicle's left normal (m).
    pub offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Disturbances {
    /// Lateral road grade (rise over run).
    pub grade: f64,
    pub yaw_noise_std: f64,
    pub pose_noise_std: f64,
    pub heading_noise_std: f64,
    pub lateral_step: Option<LateralStep>,
    /// Constant additive terms on β̇ and ṙ of the truth plant.
    pub delta_beta: f64,
    pub delta_r: f64,
}

impl Default for Disturbances {
    fn default() -> Self {
        Disturbances {
            grade: 0.0,
            yaw_noise_std: 0.005,
            pose_noise_std: 0.0,
            heading_noise_std: 0.0,
            lateral_step: None,
            delta_beta: 0.0,
            delta_r: 0.0,
        }
    }
}

impl Disturbances {
    pub fn none() -> Self {
        Disturbances {
            yaw_noise_std: 0.0,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub run: RunConfig,
    pub path: PathConfig,
    #[serde(default)]
    pub vehicle: VehicleConfig,
    pub controller: ControllerConfig,
    #[serde(default)]
    pub speed: SpeedConfig,
    #[serde(default = "default_initial")]
    pub initial: InitialConfig,
    #[serde(default)]
    pub disturbances: Disturbances,
    #[serde(default)]
    pub metrics: MetricsConfig,
}

fn default_initial() -> InitialConfig {
    InitialConfig {
        y_e: 0.5,
        theta_e: 0.0,
    }
}

impl Scenario {
    /// Start from rest, 0.5 m off the path, ramp to 10 m/s.
    pub fn new(path: PathConfig, kind: ControllerKind) -> Self {
        Scenario {
            name: None,
            run: RunConfig::default(),
            path,
            vehicle: VehicleConfig::default(),
            controller: ControllerConfig::new(kind),
            speed: SpeedConfig::default(),
            initial: default_initial(),
            disturbances: Disturbances::default(),
            metrics: MetricsConfig::default(),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let sc: Scenario = toml::from_str(s).map_err(|e| SteerError::Config(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serialises")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.run.dt > 0.0 && self.run.dt <= DT_MAX) {
            return Err(SteerError::param(
                "run.dt",
                format!("must lie in (0, {DT_MAX}]"),
            ));
        }
        if self.run.substeps == Some(0) {
            return Err(SteerError::param("run.substeps", "must be at least 1"));
        }
        if let Some(d) = self.run.duration {
            if !(d > 0.0) {
                return Err(SteerError::param("run.duration", "must be positive"));
            }
        }
        if self.initial.y_e.abs() > 5.0 || self.initial.theta_e.abs() > 1.0 {
            return Err(SteerError::param(
                "initial",
                "posture error too large (|y_e| ≤ 5, |θ_e| ≤ 1)",
            ));
        }
        let d = &self.disturbances;
        if !(d.yaw_noise_std >= 0.0 && d.pose_noise_std >= 0.0 && d.heading_noise_std >= 0.0) {
            return Err(SteerError::param(
                "disturbances",
                "noise std must be non-negative",
            ));
        }
        self.controller.kin.validate()?;
        self.controller.hgo.validate()?;
        self.vehicle.resolve()?;
        self.speed.profile()?;
        self.path.specs()?;
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut s = self.clone();
        s.run.seed = seed;
        s
    }

    /// `n` copies with consecutive seeds starting at the scenario's own.
    pub fn seeds(&self, n: usize) -> Vec<Scenario> {
        (0..n as u64)
            .map(|k| self.with_seed(self.run.seed + k))
            .collect()
    }

    pub fn with_controller(&self, kind: ControllerKind) -> Self {
        let mut s = self.clone();
        s.controller.kind = kind;
        s
    }

    pub fn with_weather(&self, w: Weather) -> Self {
        let mut s = self.clone();
        s.vehicle.preset = w;
        s
    }
}

/// One logged control period. Column order is the CSV header order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub t: f64,
    pub s_ref: f64,
    pub seg: usize,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub beta: f64,
    pub r: f64,
    pub phi: f64,
    pub v: f64,
    pub r_meas: f64,
    pub r_hat: f64,
    pub beta_hat: f64,
    pub y_e: f64,
    pub theta_e: f64,
    pub theta_bar_e: f64,
    pub sigma_k: f64,
    pub x_e: f64,
    pub kappa_ref: f64,
    pub v_ref: f64,
    pub c: f64,
    pub c_capped: bool,
    pub c_violation: bool,
    pub r_kin_raw: f64,
    pub r_kin: f64,
    pub r_threshold: f64,
    pub r_clipped: bool,
    pub phi_des: f64,
    pub omega_raw: f64,
    pub omega: f64,
    pub omega_saturated: bool,
    pub a_lat: f64,
    pub a_ref: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentInfo {
    pub label: String,
    pub s_start: f64,
    pub s_end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimTrace {
    pub controller: ControllerKind,
    pub seed: u64,
    pub dt: f64,
    pub weather: Weather,
    pub segments: Vec<SegmentInfo>,
    /// Friction comfort bound `k1 μ g` of the controller's belief.
    pub comfort_limit: f64,
    pub reached_end: bool,
    pub rows: Vec<TraceRow>,
}

impl SimTrace {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.rows {
            wr.serialize(r)
                .map_err(|e| SteerError::Config(format!("csv: {e}")))?;
        }
        wr.flush()
            .map_err(|e| SteerError::Config(format!("csv: {e}")))?;
        Ok(())
    }

    pub fn csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory csv");
        String::from_utf8(buf).expect("utf8")
    }

    pub fn last(&self) -> &TraceRow {
        self.rows.last().expect("non-empty trace")
    }
}

/// Plant substeps per control period so that `h·‖A‖ ≤ 1` at the lowest
/// modelled speed (well inside the RK4 stability region).
fn plant_substeps(truth: &VehicleParams, dt: f64) -> usize {
    let stiff = dyn_coeffs(truth, truth.v_eps).stiffness().max(20.0);
    ((dt * stiff).ceil() as usize).max(4)
}

fn axle_pose(s: &PlantState, p: &VehicleParams) -> AxlePose {
    let (x, y) = s.rear_axle(p);
    let (_, ar) = s.slip_angles(p);
    AxlePose {
        x,
        y,
        theta: s.theta,
        v: if s.v < p.v_eps { s.v } else { s.rear_speed(p) },
        alpha_r: ar,
    }
}

fn finite(s: &PlantState) -> bool {
    s.to_vec().iter().all(|x| x.is_finite())
}

enum CtlState {
    Prop {
        dynamic: DynCtlState,
        gains: DynGains,
        mode: KinMode,
    },
    B {
        gains: DynGains,
    },
    A {
        gains: BaselineAGains,
        state: BaselineAState,
    },
}

/// Run one scenario to the path end (or its duration).
pub fn run(sc: &Scenario) -> Result<SimTrace> {
    match run_partial(sc)? {
        (trace, None) => Ok(trace),
        (_, Some(e)) => Err(e),
    }
}

/// Like [`run`], but a mid-run abort still returns the rows recorded so far
/// together with the error. Setup errors are returned directly.
pub fn run_partial(sc: &Scenario) -> Result<(SimTrace, Option<SteerError>)> {
    sc.validate()?;
    let (truth, model) = sc.vehicle.resolve()?;
    let path = build_path(&sc.path.specs()?)?;
    let profile = sc.speed.profile()?;
    let dt = sc.run.dt;
    let kin = sc.controller.kin;
    let hgo_cfg = sc.controller.hgo;
    let dist = sc.disturbances;

    let mut ctl = match sc.controller.kind {
        ControllerKind::Prop | ControllerKind::PropS | ControllerKind::B => {
            let gains = match sc.controller.dyn_gains {
                Some(g) => {
                    let t = &sc.controller.dyn_tuning;
                    g.validate(&model, (t.speed_min, t.speed_max))?;
                    g
                }
                None => tune_dyn_gains(&model, &sc.controller.dyn_tuning)?,
            };
            match sc.controller.kind {
                ControllerKind::B => CtlState::B { gains },
                k => CtlState::Prop {
                    dynamic: DynCtlState::default(),
                    gains,
                    mode: if k == ControllerKind::PropS {
                        KinMode::PropS
                    } else {
                        KinMode::Prop
                    },
                },
            }
        }
        ControllerKind::A => {
            let gains = match sc.controller.a_gains {
                Some(g) => {
                    g.validate()?;
                    g
                }
                None => tune_baseline_a(&model, &sc.controller.a_tuning)?,
            };
            CtlState::A {
                gains,
                state: BaselineAState::default(),
            }
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(sc.run.seed);
    let gauss = |std: f64, rng: &mut ChaCha8Rng| {
        if std > 0.0 {
            Normal::new(0.0, std).expect("valid std").sample(rng)
        } else {
            0.0
        }
    };

    // initial posture relative to the path start
    let r0 = path.sample(0.0);
    let theta = r0.theta - sc.initial.theta_e;
    let (nx, ny) = (-r0.theta.sin(), r0.theta.cos());
    let rear = (r0.x - sc.initial.y_e * nx, r0.y - sc.initial.y_e * ny);
    let (v0, _) = profile.eval(0.0);
    let mut plant = PlantState {
        x: rear.0 + truth.lr * theta.cos(),
        y: rear.1 + truth.lr * theta.sin(),
        theta,
        v: v0,
        ..Default::default()
    };

    let n_sub = sc
        .run
        .substeps
        .unwrap_or_else(|| plant_substeps(&truth, dt));
    let slope = slope_force(&truth, dist.grade);
    let mut hgo = HgoState::default();
    let mut r_meas = plant.r + gauss(dist.yaw_noise_std, &mut rng);
    let measure_pose = |s: &PlantState, rng: &mut ChaCha8Rng| {
        let mut p = axle_pose(s, &truth);
        p.x += gauss(dist.pose_noise_std, rng);
        p.y += gauss(dist.pose_noise_std, rng);
        p.theta += gauss(dist.heading_noise_std, rng);
        p
    };
    let mut err: ErrorState = initial_reference(&path, &measure_pose(&plant, &mut rng))?;
    let vbar0 = model.vbar(v0);
    let theta_bar0 = compensated_heading(err.theta_e, 0.0, kin.k_f);
    let (c0, _) = initial_c0(&kin, err.y_e, theta_bar0, vbar0);
    let comfort_limit = kin.k1 * model.mu * GRAVITY;

    let t_stop = sc.run.duration.unwrap_or(sc.run.max_time);
    let mut rows = Vec::new();
    let mut reached_end = false;
    let mut step_applied = false;
    let mut k: u64 = 0;
    let mut step = || -> Result<()> {
        loop {
            let t = k as f64 * dt;
            if k > 0 {
                err = update_reference(&path, &measure_pose(&plant, &mut rng), &err, dt, t)?;
            }
            if err.at_end && sc.run.duration.is_none() {
                reached_end = true;
                break;
            }
            if t > t_stop + 1e-9 {
                break;
            }
            let (v, v_dot) = profile.eval(t);
            plant.v = v;
            let vbar = model.vbar(v);
            let coeffs = dyn_coeffs(&model, vbar);
            let phi_meas = plant.phi;
            let (_, beta_hat_dot) = hgo_deriv(&hgo, r_meas, phi_meas, &coeffs, &hgo_cfg);
            // B has no slip compensation; its c schedule sees the raw heading error.
            let k_f = if sc.controller.kind == ControllerKind::B {
                0.0
            } else if kin.slip_fade_speed > 0.0 {
                kin.k_f * (v / kin.slip_fade_speed).min(1.0)
            } else {
                kin.k_f
            };
            let theta_bar = compensated_heading(err.theta_e, hgo.beta_hat, k_f);
            let delta_ar = sideslip_perturbation(err.kappa_ref, &model, vbar);
            let sched = schedule_c(&kin, c0, t, err.y_e, theta_bar, vbar, model.mu, delta_ar);
            let (r_th, _) = r_threshold(&kin, model.mu, vbar);
            let mut kin_in = KinInputs {
                y_e: err.y_e,
                theta_bar_e: theta_bar,
                sigma_k: err.sigma_k,
                kappa: err.kappa_ref,
                dkappa: err.dkappa_ref,
                vbar,
                v_dot,
                c: sched.c,
                c_dot: sched.c_dot,
                delta_ar,
            };

            struct Cmd {
                r_raw: f64,
                r_kin: f64,
                clipped: bool,
                phi_des: f64,
                omega_raw: f64,
                omega: f64,
            }
            let cmd = match &mut ctl {
                CtlState::Prop {
                    dynamic,
                    gains,
                    mode,
                } => {
                    if kin.steer_rate_cap {
                        let c = rate_feasible_c(
                            &kin_in,
                            &kin,
                            *mode,
                            r_th,
                            model.wheelbase(),
                            OMEGA_MAX,
                        );
                        if c < kin_in.c {
                            kin_in.c = c;
                            kin_in.c_dot = 0.0;
                        }
                    }
                    let kc = yaw_command(&kin_in, &kin, *mode, r_th);
                    let out = steering_rate(
                        &DynInputs {
                            beta_hat: hgo.beta_hat,
                            beta_hat_dot,
                            r_hat: hgo.r_hat,
                            phi_act: phi_meas,
                            r_kin: kc.r_kin,
                            r_kin_dot: kc.r_dot,
                            r_kin_ddot: kc.r_ddot,
                        },
                        dynamic,
                        &coeffs,
                        gains,
                    );
                    dynamic.advance(&out, dt);
                    Cmd {
                        r_raw: kc.r_raw,
                        r_kin: kc.r_kin,
                        clipped: kc.clipped,
                        phi_des: out.phi_des,
                        omega_raw: out.omega_raw,
                        omega: out.omega,
                    }
                }
                CtlState::B { gains } => {
                    kin_in.theta_bar_e = err.theta_e;
                    let kb = baseline_b_kinematic(&kin_in, &kin);
                    let out = baseline_b_dynamic(
                        &kb,
                        hgo.beta_hat,
                        beta_hat_dot,
                        hgo.r_hat,
                        phi_meas,
                        &coeffs,
                        gains,
                    );
                    Cmd {
                        r_raw: kb.r_ref,
                        r_kin: kb.r_ref,
                        clipped: false,
                        phi_des: out.phi_des,
                        omega_raw: out.omega_raw,
                        omega: out.omega,
                    }
                }
                CtlState::A { gains, state } => {
                    let out = baseline_a_step(
                        err.y_e,
                        err.theta_e,
                        err.kappa_ref,
                        vbar,
                        r_meas,
                        gains,
                        state,
                        dt,
                    );
                    Cmd {
                        r_raw: out.r_cmd,
                        r_kin: out.r_cmd,
                        clipped: false,
                        phi_des: f64::NAN,
                        omega_raw: out.omega_raw,
                        omega: out.omega,
                    }
                }
            };
            let omega = cmd.omega.clamp(-OMEGA_MAX, OMEGA_MAX);
            let input_at = |tau: f64| {
                let (_, vd) = profile.eval(tau);
                PlantInput {
                    omega,
                    v_dot: vd,
                    slope_force: slope,
                    delta_beta: dist.delta_beta,
                    delta_r: dist.delta_r,
                }
            };
            let d0 = nonlinear_truth_deriv(&plant, &truth, &input_at(t));
            rows.push(TraceRow {
                t,
                s_ref: err.s_ref,
                seg: err.seg_index,
                x: plant.x,
                y: plant.y,
                theta: plant.theta,
                beta: plant.beta,
                r: plant.r,
                phi: plant.phi,
                v,
                r_meas,
                r_hat: hgo.r_hat,
                beta_hat: hgo.beta_hat,
                y_e: err.y_e,
                theta_e: err.theta_e,
                theta_bar_e: theta_bar,
                sigma_k: err.sigma_k,
                x_e: err.x_e,
                kappa_ref: err.kappa_ref,
                v_ref: err.v_ref,
                c: sched.c,
                c_capped: sched.capped,
                c_violation: sched.violation,
                r_kin_raw: cmd.r_raw,
                r_kin: cmd.r_kin,
                r_threshold: r_th,
                r_clipped: cmd.clipped,
                phi_des: cmd.phi_des,
                omega_raw: cmd.omega_raw,
                omega,
                omega_saturated: omega != cmd.omega_raw,
                a_lat: lateral_accel(&plant, d0[0], v_dot),
                a_ref: err.kappa_ref * err.v_ref * err.v_ref,
            });

            // plant
            let base = plant;
            let mut f = |tau: f64, x: &[f64; 6]| {
                let (vv, _) = profile.eval(tau);
                nonlinear_truth_deriv(&base.with_vec(x, vv), &truth, &input_at(tau))
            };
            let x1 = rk4_substeps(&mut f, t, &plant.to_vec(), dt, n_sub);
            let t1 = (k + 1) as f64 * dt;
            plant = plant.with_vec(&x1, profile.eval(t1).0);
            plant.phi = plant.phi.clamp(-PHI_MAX, PHI_MAX);
            if let Some(ls) = dist.lateral_step {
                if !step_applied && t1 >= ls.t {
                    plant.x -= ls.offset * plant.theta.sin();
                    plant.y += ls.offset * plant.theta.cos();
                    step_applied = true;
                }
            }
            if !finite(&plant) {
                return Err(SteerError::NonFinite {
                    t: t1,
                    what: "plant state",
                });
            }

            // sensor and observer
            let r_new = plant.r + gauss(dist.yaw_noise_std, &mut rng);
            hgo = hgo_advance(
                &hgo,
                (r_meas, r_new),
                (phi_meas, plant.phi),
                &coeffs,
                &hgo_cfg,
                dt,
            )?;
            if !(hgo.r_hat.is_finite() && hgo.beta_hat.is_finite()) {
                return Err(SteerError::NonFinite {
                    t: t1,
                    what: "observer state",
                });
            }
            r_meas = r_new;
            k += 1;
        }
        Ok(())
    };
    let aborted = step().err();

    let segments = (0..path.num_segments())
        .map(|i| {
            let (a, b) = path.segment_bounds(i);
            SegmentInfo {
                label: path.labels()[i].clone(),
                s_start: a,
                s_end: b,
            }
        })
        .collect();
    let trace = SimTrace {
        controller: sc.controller.kind,
        seed: sc.run.seed,
        dt,
        weather: sc.vehicle.preset,
        segments,
        comfort_limit,
        reached_end,
        rows,
    };
    Ok((trace, aborted))
}

pub fn path_of(sc: &Scenario) -> Result<Path> {
    build_path(&sc.path.specs()?)
}

/// Outcome of one run inside a batch.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub index: usize,
    pub controller: ControllerKind,
    pub seed: u64,
    /// Rows up to the end of the run or up to the abort; `None` when the
    /// scenario failed before the loop started.
    pub trace: Option<SimTrace>,
    pub error: Option<String>,
}

impl RunOutcome {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

/// Run scenarios in parallel; results keep the input order and failures
/// do not stop the batch.
pub fn batch(scenarios: &[Scenario]) -> Vec<RunOutcome> {
    scenarios
        .par_iter()
        .enumerate()
        .map(|(index, sc)| {
            let (trace, error) = match run_partial(sc) {
                Ok((trace, err)) => (Some(trace), err.map(|e| e.to_string())),
                Err(e) => (None, Some(e.to_string())),
            };
            RunOutcome {
                index,
                controller: sc.controller.kind,
                seed: sc.run.seed,
                trace,
                error,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight(kind: ControllerKind) -> Scenario {
        let mut sc = Scenario::new(
            PathConfig {
                preset: None,
                segments: Some(vec![SegmentSpec::line(100.0)]),
            },
            kind,
        );
        sc.initial = InitialConfig::default();
        sc.disturbances = Disturbances::none();
        sc
    }

    #[test]
    fn equilibrium_preserved_on_straight() {
        for kind in [
            ControllerKind::A,
            ControllerKind::B,
            ControllerKind::Prop,
            ControllerKind::PropS,
        ] {
            let tr = run(&straight(kind)).unwrap();
            assert!(tr.reached_end);
            let worst = tr.rows.iter().map(|r| r.y_e.abs()).fold(0.0, f64::max);
            assert!(worst < 1e-3, "{kind:?}: {worst}");
        }
    }

    #[test]
    fn speed_profile_interpolates() {
        let p = SpeedConfig::default().profile().unwrap();
        assert_eq!(p.eval(0.0), (0.0, 2.0));
        assert_eq!(p.eval(2.5), (5.0, 2.0));
        assert_eq!(p.eval(7.0), (10.0, 0.0));
        let v = SpeedConfig::varying().profile().unwrap();
        assert_eq!(v.eval(30.0).0, 8.0);
        assert!(SpeedProfile::new(vec![(0.0, 1.0), (0.0, 2.0)]).is_err());
    }

    #[test]
    fn seeds_are_consecutive() {
        let sc = straight(ControllerKind::Prop).with_seed(5);
        let s: Vec<u64> = sc.seeds(3).iter().map(|s| s.run.seed).collect();
        assert_eq!(s, vec![5, 6, 7]);
    }

    #[test]
    fn rejects_bad_dt() {
        let mut sc = straight(ControllerKind::Prop);
        sc.run.dt = 0.1;
        assert!(run(&sc).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let sc = Scenario::new(PathConfig::preset("l"), ControllerKind::PropS);
        let back = Scenario::from_toml_str(&sc.to_toml_string()).unwrap();
        assert_eq!(back, sc);
        let err = Scenario::from_toml_str("[path]\npreset = \"l\"\n").unwrap_err();
        assert!(err.to_string().contains("controller"), "{err}");
    }

    #[test]
    fn rainy_preset_degrades_truth_only() {
        let v = VehicleConfig {
            preset: Weather::Rainy,
            ..Default::default()
        };
        let (t, m) = v.resolve().unwrap();
        assert_eq!(t.mu, 0.5);
        assert!((t.cf - 0.7 * VehicleParams::perturbed().cf).abs() < 1e-9);
        assert_eq!(m.cf, VehicleParams::nominal().cf);
        assert_eq!(m.mu, 0.8);
    }
}
