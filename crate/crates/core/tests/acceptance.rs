//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use slipsteer::analysis::*;
use slipsteer::dynamic::{tune_dyn_gains, DynTuning};
use slipsteer::kinematic::{c_safe, k2_bound, KinGains};
use slipsteer::metrics::{ControllerReport, MetricsConfig, SegmentAggregate};
use slipsteer::observer::HgoConfig;
use slipsteer::path::SegmentSpec;
use slipsteer::sim::*;
use slipsteer::vehicle::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> Outcome {
    let t = Instant::now();
    let mut o = f();
    let el = t.elapsed();
    o.detail = format!("{} [{:.2?}]", o.detail, el);
    if let Some(l) = limit {
        if el > l {
            o.pass = false;
            o.detail = format!("{} exceeds {:?}", o.detail, l);
        }
    }
    o
}

fn rel(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt() / (b.0 * b.0 + b.1 * b.1).sqrt()
}

fn c1() -> Outcome {
    let e = jacobian_eigenvalues(&KinGains::stability_study(), 0.65, 10.0);
    let want = [(-0.466, -0.608), (-0.466, 0.608), (-0.068, 0.0)];
    let worst = e
        .iter()
        .zip(&want)
        .map(|(g, w)| rel(*g, *w))
        .fold(0.0, f64::max);
    check(
        worst <= 0.05,
        format!("eigenvalues {e:.4?}, worst relative error {worst:.4}"),
    )
}

fn c2() -> Outcome {
    let g = KinGains::stability_study();
    let grid = lyapunov_kin_grid(&g, 0.65, 10.0, 1.0, 1000);
    let w_max = grid.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let p = VehicleParams::nominal();
    let dg = tune_dyn_gains(&p, &DynTuning::default()).expect("default tuning");
    let suite = dynamic_energy_suite(&p, 10.0, &dg, 100, 2024);
    check(
        w_max < 0.0 && suite.max_increase <= 1e-8 && suite.unsaturated,
        format!(
            "(a) max Ẇ_kin on {} grid points = {w_max:.3e}; (b) {} trajectories, largest step increase of W_c = {:.3e}, unsaturated = {}",
            grid.len(),
            suite.trajectories,
            suite.max_increase,
            suite.unsaturated
        ),
    )
}

fn c3() -> Outcome {
    // arc equilibrium with a perfectly known vehicle
    let p = VehicleParams::perturbed();
    let mut notes = Vec::new();
    let mut pass = true;
    for v in [6.0, 8.0] {
        let mut sc = Scenario::new(
            PathConfig {
                preset: None,
                segments: Some(vec![SegmentSpec::arc(50.0, 3000.0)]),
            },
            ControllerKind::Prop,
        );
        sc.speed = SpeedConfig::constant(v);
        sc.initial = InitialConfig {
            y_e: 0.0,
            theta_e: 0.0,
        };
        sc.disturbances = Disturbances::none();
        sc.vehicle.model = "perturbed".into();
        sc.run.duration = Some(300.0);
        let tr = run(&sc).expect("arc run");
        let last = tr.last();
        let want = -p.vbar(v) * sideslip_perturbation(0.02, &p, v) / sc.controller.kin.k_i;
        let err = (last.sigma_k - want).abs() / want.abs();
        pass &= last.y_e.abs() < 5e-3 && err <= 0.05;
        notes.push(format!(
            "v={v}: y_e={:.2e} σ_k={:.4} (−v̄δ_ar/K_i={want:.4}, {:.2}%)",
            last.y_e,
            last.sigma_k,
            100.0 * err
        ));
    }
    let dg = tune_dyn_gains(&p, &DynTuning::default()).expect("tuning");
    let tr = dynamic_loop_trace(
        &p,
        10.0,
        &dg,
        [0.0; 5],
        (0.0, 1.0, 0.0, 0.1),
        0.05,
        1e-3,
        40_000,
    );
    let r_e = tr.r_e.last().unwrap().abs();
    pass &= r_e < 1e-4;
    notes.push(format!("yaw loop under δ_r=0.05: |r_e,ss|={r_e:.2e}"));
    check(pass, notes.join("; "))
}

fn c4() -> Outcome {
    let rows = settling_law_study(&[1.0, 2.0, 3.0], 10.0, 0.25);
    let pass = rows.iter().all(|r| (0.7..=1.5).contains(&r.ratio));
    let s: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "c={}: T_s={:.2}s (4/c={:.2}, ×{:.2})",
                r.c, r.settling, r.predicted, r.ratio
            )
        })
        .collect();
    check(pass, s.join("; "))
}

fn c5() -> Outcome {
    let speeds: Vec<f64> = (1..=800).map(|k| k as f64 * 0.025).collect();
    let roots = delta_ar_roots(&slip_curve(&VehicleParams::perturbed(), &speeds));
    check(
        roots.len() == 1 && (8.5..=10.5).contains(&roots[0]),
        format!("δ_ar zero crossings {roots:.3?} m/s"),
    )
}

fn c6() -> Outcome {
    let g = KinGains::default();
    let p = VehicleParams::perturbed();
    let d = sideslip_perturbation(kappa_max(10.0), &p, 10.0);
    let cs = c_safe(&g, 0.5, 10.0, 0.5, 0.0, d, 0.0);
    let wet = k2_bound(0.8, 0.5, 0.02, 10.0);
    let dry = k2_bound(0.8, 0.7, 0.02, 10.0);
    check(
        (cs - 3.4).abs() <= 0.3 && (wet - 0.49).abs() <= 0.02 && (dry - 0.64).abs() <= 0.02,
        format!("c_safe={cs:.3}, k2 < {wet:.3} (wet), k2 < {dry:.3} (dry)"),
    )
}

fn c7() -> Outcome {
    let p = VehicleParams::nominal();
    let mut errs = Vec::new();
    let mut eig_err: f64 = 0.0;
    for eps in [0.1, 0.05, 0.025] {
        let cfg = HgoConfig {
            eps,
            ..Default::default()
        };
        errs.push(hgo_steady_beta_error(&p, 10.0, &cfg, 0.05));
        let mut want = cfg.design_poles().to_vec();
        want.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        for (g, w) in hgo_scaled_eigenvalues(&cfg).iter().zip(&want) {
            eig_err = eig_err.max((g.0 - w.0).abs().max((g.1 - w.1).abs()));
        }
    }
    let decreasing = errs.windows(2).all(|w| w[1] < w[0]);
    check(
        decreasing && eig_err <= 1e-9,
        format!("steady |β̃| for ε=0.1,0.05,0.025: {errs:.4?}; eigenvalue error {eig_err:.1e}"),
    )
}

/// Runs shared by criteria 8 and 10.
struct Batches {
    c8: Vec<(ControllerKind, Vec<RunOutcome>)>,
    extra: Vec<RunOutcome>,
}

fn comprehensive(kind: ControllerKind) -> Scenario {
    let mut sc = Scenario::new(PathConfig::preset("comprehensive"), kind);
    sc.speed = SpeedConfig::varying();
    sc.vehicle.preset = Weather::Rainy;
    sc
}

fn c8(b: &mut Option<Batches>) -> Outcome {
    let t = Instant::now();
    let kinds = [
        ControllerKind::B,
        ControllerKind::Prop,
        ControllerKind::PropS,
    ];
    let c8: Vec<(ControllerKind, Vec<RunOutcome>)> = kinds
        .iter()
        .map(|&k| (k, batch(&comprehensive(k).seeds(10))))
        .collect();
    let elapsed = t.elapsed();
    let agg = |k: ControllerKind, label: &str| -> SegmentAggregate {
        let out = &c8.iter().find(|e| e.0 == k).unwrap().1;
        ControllerReport::from_outcomes(k.name(), "rainy", out, &MetricsConfig::default())
            .segments
            .into_iter()
            .find(|s| s.label == label)
            .expect("segment present")
    };
    let (ps_b1, p_b1) = (
        agg(ControllerKind::PropS, "b1"),
        agg(ControllerKind::Prop, "b1"),
    );
    let (ps_a1, b_a1) = (
        agg(ControllerKind::PropS, "a1"),
        agg(ControllerKind::B, "a1"),
    );
    let a = ps_b1.e_rng.mean <= p_b1.e_rng.mean && ps_b1.a_rms.mean <= p_b1.a_rms.mean;
    let bb = ps_a1.e_l10.mean <= b_a1.e_l10.mean;
    let c = ps_a1.pct_c == 100.0 && b_a1.pct_c < 100.0;
    let pass = a && bb && c && elapsed < Duration::from_secs(120);
    let detail = format!(
        "(a) b1 E_RNG {:.3} ≤ {:.3}, A_RMS {:.3} ≤ {:.3}: {a}; (b) a1 E_L10 {:.3} ≤ B {:.3}: {bb}; (c) a1 %C {:.0} vs B {:.0}: {c}; batch {:.1?}",
        ps_b1.e_rng.mean,
        p_b1.e_rng.mean,
        ps_b1.a_rms.mean,
        p_b1.a_rms.mean,
        ps_a1.e_l10.mean,
        b_a1.e_l10.mean,
        ps_a1.pct_c,
        b_a1.pct_c,
        elapsed
    );
    // extra runs for the contract suite: every controller, L and S paths, both presets
    let mut scen = Vec::new();
    for kind in [
        ControllerKind::A,
        ControllerKind::B,
        ControllerKind::Prop,
        ControllerKind::PropS,
    ] {
        for path in ["l", "s"] {
            for w in [Weather::Clear, Weather::Rainy] {
                scen.push(Scenario::new(PathConfig::preset(path), kind).with_weather(w));
            }
        }
        scen.push(comprehensive(kind).with_weather(Weather::Clear));
    }
    *b = Some(Batches {
        c8,
        extra: batch(&scen),
    });
    check(pass, detail)
}

fn c9() -> Outcome {
    let mut sc = Scenario::new(PathConfig::preset("l"), ControllerKind::PropS).with_seed(7);
    sc.disturbances.pose_noise_std = 0.01;
    let a = run(&sc).expect("run").csv_string();
    let b = run(&sc).expect("run").csv_string();
    let identical = a == b;
    let mut notes = vec![format!("identical traces: {identical}")];
    let mut pass = identical;
    for kind in [
        ControllerKind::PropS,
        ControllerKind::Prop,
        ControllerKind::B,
    ] {
        let mut sc = Scenario::new(PathConfig::preset("l"), kind);
        sc.disturbances = Disturbances::none();
        sc.run.substeps = Some(4);
        let coarse = run(&sc).expect("run");
        sc.run.substeps = Some(8);
        let fine = run(&sc).expect("run");
        let d = (coarse.last().y_e - fine.last().y_e).abs();
        pass &= d < 1e-5 && coarse.rows.len() == fine.rows.len();
        notes.push(format!("{}: Δy_e={d:.1e}", kind.name()));
    }
    check(
        pass,
        format!(
            "{} (plant step halved at fixed control period)",
            notes.join(", ")
        ),
    )
}

fn c10(b: &Option<Batches>) -> Outcome {
    let Some(b) = b else {
        return check(false, "no runs".into());
    };
    let mut runs = 0;
    let mut rows = 0;
    let mut worst = (0.0f64, 0.0f64, f64::NEG_INFINITY, 0.0f64);
    let all = b.c8.iter().flat_map(|e| e.1.iter()).chain(b.extra.iter());
    for o in all.filter(|o| o.ok()) {
        let tr = o.trace.as_ref().unwrap();
        runs += 1;
        for r in &tr.rows {
            rows += 1;
            worst.0 = worst.0.max(r.phi.abs());
            worst.1 = worst.1.max(r.omega.abs());
            if o.controller == ControllerKind::PropS {
                worst.2 = worst.2.max(r.r_kin.abs() - r.r_threshold);
            }
            worst.3 = worst.3.max(r.x_e.abs());
        }
    }
    let pass = runs > 0
        && worst.0 <= PHI_MAX + 1e-12
        && worst.1 <= OMEGA_MAX
        && worst.2 <= 1e-12
        && worst.3 < 1e-3;
    check(
        pass,
        format!(
            "{runs} runs, {rows} steps: max|φ|={:.2}°, max|ω|={:.3}, max(|r_kin|−r_th)={:.1e}, max|x_e|={:.1e} m",
            worst.0.to_degrees(),
            worst.1,
            worst.2,
            worst.3
        ),
    )
}

fn main() -> ExitCode {
    let mut shared = None;
    let results = [
        (
            "1 Jacobian eigenvalues",
            timed(Some(Duration::from_secs(1)), c1),
        ),
        (
            "2 Lyapunov decrease",
            timed(Some(Duration::from_secs(10)), c2),
        ),
        ("3 Equilibrium identities", timed(None, c3)),
        ("4 Settling law", timed(None, c4)),
        ("5 δ_ar zero crossing", timed(None, c5)),
        ("6 Safety bounds", timed(None, c6)),
        ("7 HGO scaling", timed(None, c7)),
        (
            "8 Controller ordering",
            timed(Some(Duration::from_secs(120)), || c8(&mut shared)),
        ),
        ("9 Determinism & integration", timed(None, c9)),
        ("10 Contract suite", timed(None, || c10(&shared))),
    ];
    let mut ok = true;
    for (name, o) in &results {
        println!(
            "{} criterion {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        ok &= o.pass;
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
