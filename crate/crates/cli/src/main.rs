use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use slipsteer::analysis::{figure, FigureName};
use slipsteer::metrics::{segment_metrics, ControllerReport, Report, SegmentAggregate, Stat};
use slipsteer::plot::BarChart;
use slipsteer::sim::{batch, run_partial, ControllerKind, Scenario, SimTrace, Weather};

const SUMMARY_SCHEMA_VERSION: u32 = 1;
const COMPARISON_SCHEMA_VERSION: u32 = 1;

#[derive(Parser)]
#[command(
    name = "slipsteer",
    version,
    about = "Slip-compensated path tracking simulator"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario; writes trace.csv and summary.json.
    Simulate(SimulateArgs),
    /// Batch controllers × presets × seeds and tabulate per-segment metrics.
    Compare(CompareArgs),
    /// Regenerate the analysis figures as CSV + SVG.
    Figures(FiguresArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Preset {
    Clear,
    Rainy,
}

impl Preset {
    fn weather(self) -> Weather {
        match self {
            Preset::Clear => Weather::Clear,
            Preset::Rainy => Weather::Rainy,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Override `controller.kind` (A, B, PROP, PROP-S).
    #[arg(long)]
    controller: Option<String>,
    /// Override `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Override `vehicle.preset`.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
}

#[derive(Args)]
struct CompareArgs {
    /// Scenario file; repeat for several paths.
    #[arg(long, required = true)]
    scenario: Vec<PathBuf>,
    #[arg(long, default_value = "compare")]
    out: PathBuf,
    /// Controllers to compare (repeat or comma-separate); all four by default.
    #[arg(long, value_delimiter = ',')]
    controller: Vec<String>,
    /// First seed; defaults to each scenario's `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Trials per controller and preset, on consecutive seeds.
    #[arg(long, default_value_t = 1)]
    seeds: usize,
    /// Road presets (repeat or comma-separate); the scenario's own by default.
    #[arg(long, value_enum, value_delimiter = ',')]
    preset: Vec<Preset>,
}

#[derive(Args)]
struct FiguresArgs {
    /// fig4, fig5, fig6, fig7, fig8, fig13 or all (repeatable).
    #[arg(long, default_value = "all", value_delimiter = ',')]
    figure: Vec<String>,
    #[arg(long, default_value = "figures")]
    out: PathBuf,
}

/// Everything that determines a subcommand's outputs. Keys serialise in
/// sorted order, so the hash is stable.
struct Manifest {
    value: Value,
    hash: String,
}

impl Manifest {
    fn new(
        subcommand: &str,
        scenarios: &[(PathBuf, String)],
        out: &Path,
        options: Value,
        seeds: &[u64],
    ) -> Self {
        let value = json!({
            "tool": "slipsteer",
            "version": env!("CARGO_PKG_VERSION"),
            "subcommand": subcommand,
            "scenarios": scenarios
                .iter()
                .map(|(p, text)| json!({ "path": p.display().to_string(), "sha256": sha256(text.as_bytes()) }))
                .collect::<Vec<_>>(),
            "out": out.display().to_string(),
            "options": options,
            "seeds": seeds,
        });
        let hash = sha256(&serde_json::to_vec(&value).expect("manifest serialises"));
        Manifest { value, hash }
    }

    fn csv_comment(&self) -> String {
        format!("# manifest_sha256={}\n", self.hash)
    }

    /// Insert the hash as a comment right after the XML declaration.
    fn stamp_svg(&self, svg: &str) -> String {
        let comment = format!("<!-- manifest_sha256={} -->\n", self.hash);
        match svg.find("?>") {
            Some(i) if svg.starts_with("<?xml") => {
                let cut = i + 2 + usize::from(svg[i + 2..].starts_with('\n'));
                format!("{}{comment}{}", &svg[..cut], &svg[cut..])
            }
            _ => format!("{comment}{svg}"),
        }
    }

    fn write(&self, dir: &Path) -> Result<()> {
        write_json(
            &dir.join("manifest.json"),
            &json!({ "manifest": self.value, "manifest_sha256": self.hash }),
        )
    }
}

fn sha256(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    write(path, &s)
}

fn load_scenario(path: &Path) -> Result<(Scenario, String)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let sc =
        Scenario::from_toml_str(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    Ok((sc, text))
}

fn parse_controller(s: &str) -> Result<ControllerKind> {
    Ok(ControllerKind::parse(s.trim())?)
}

fn weather_name(w: Weather) -> &'static str {
    match w {
        Weather::Clear => "clear",
        Weather::Rainy => "rainy",
    }
}

/// JSON has no NaN or infinity; those become null.
fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

fn max_abs(tr: &SimTrace, f: fn(&slipsteer::sim::TraceRow) -> f64) -> Value {
    num(tr.rows.iter().map(|r| f(r).abs()).fold(0.0, f64::max))
}

fn run_summary(sc: &Scenario, tr: &SimTrace, error: Option<&str>) -> Value {
    let last = tr.rows.last();
    let segments: Vec<Value> = segment_metrics(tr, &sc.metrics)
        .iter()
        .map(|m| {
            json!({
                "label": m.label,
                "e_rms": num(m.e_rms),
                "e_rng": num(m.e_rng),
                "e_l10": num(m.e_l10),
                "a_rms": num(m.a_rms),
                "converged": m.converged,
                "t_converged": m.t_converged.map(num),
                "samples": m.samples,
                "short": m.short,
            })
        })
        .collect();
    json!({
        "scenario": sc.name,
        "controller": tr.controller.name(),
        "weather": weather_name(tr.weather),
        "seed": tr.seed,
        "dt": tr.dt,
        "steps": tr.rows.len(),
        "t_end": last.map(|r| num(r.t)),
        "completed": error.is_none(),
        "reached_end": tr.reached_end,
        "error": error,
        "final": last.map(|r| json!({
            "s_ref": num(r.s_ref),
            "y_e": num(r.y_e),
            "theta_e": num(r.theta_e),
            "x_e": num(r.x_e),
            "v": num(r.v),
        })),
        "peaks": {
            "y_e": max_abs(tr, |r| r.y_e),
            "phi": max_abs(tr, |r| r.phi),
            "omega": max_abs(tr, |r| r.omega),
            "beta": max_abs(tr, |r| r.beta),
            "a_lat_error": max_abs(tr, |r| r.a_lat - r.a_ref),
        },
        "segments": segments,
    })
}

fn simulate(a: &SimulateArgs) -> Result<ExitCode> {
    let (mut sc, text) = load_scenario(&a.scenario)?;
    if let Some(c) = &a.controller {
        sc.controller.kind = parse_controller(c)?;
    }
    if let Some(s) = a.seed {
        sc.run.seed = s;
    }
    if let Some(p) = a.preset {
        sc.vehicle.preset = p.weather();
    }
    let manifest = Manifest::new(
        "simulate",
        &[(a.scenario.clone(), text)],
        &a.out,
        json!({
            "controller": sc.controller.kind.name(),
            "seed": sc.run.seed,
            "preset": weather_name(sc.vehicle.preset),
        }),
        &[sc.run.seed],
    );
    let (trace, aborted) = run_partial(&sc)?;
    let error = aborted.map(|e| e.to_string());

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let body = trace.csv_string();
    write(&a.out.join("trace.csv"), &(manifest.csv_comment() + &body))?;
    write_json(
        &a.out.join("summary.json"),
        &json!({
            "schema": "slipsteer.summary",
            "schema_version": SUMMARY_SCHEMA_VERSION,
            "manifest": manifest.value,
            "manifest_sha256": manifest.hash,
            "trace_sha256": sha256(body.as_bytes()),
            "run": run_summary(&sc, &trace, error.as_deref()),
        }),
    )?;
    manifest.write(&a.out)?;

    match error {
        Some(e) => {
            eprintln!("slipsteer: run aborted: {e}");
            eprintln!("slipsteer: partial trace written to {}", a.out.display());
            Ok(ExitCode::from(1))
        }
        None => {
            let last = trace.last();
            if sc.run.duration.is_none() && !trace.reached_end {
                eprintln!(
                    "slipsteer: warning: stopped at run.max_time = {} s before the path end",
                    sc.run.max_time
                );
            }
            println!(
                "{} {} seed {}: {} steps, t = {:.2} s, final y_e = {:.4} m -> {}",
                sc.controller.kind.name(),
                weather_name(sc.vehicle.preset),
                sc.run.seed,
                trace.rows.len(),
                last.t,
                last.y_e,
                a.out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

const BAR_METRICS: [(&str, &str); 5] = [
    ("E_RMS", "m"),
    ("E_RNG", "m"),
    ("E_L10", "m"),
    ("A_RMS", "m/s²"),
    ("pct_C", "%"),
];

fn metric_stat(s: &SegmentAggregate, metric: &str) -> (f64, f64) {
    let ms = |st: &Stat| (st.mean, if st.std.is_finite() { st.std } else { 0.0 });
    match metric {
        "E_RMS" => ms(&s.e_rms),
        "E_RNG" => ms(&s.e_rng),
        "E_L10" => ms(&s.e_l10),
        "A_RMS" => ms(&s.a_rms),
        _ => (s.pct_c, 0.0),
    }
}

fn bar_charts(title: &str, report: &Report) -> Vec<(&'static str, String)> {
    let mut groups: Vec<String> = Vec::new();
    for e in &report.entries {
        for s in &e.segments {
            if !groups.contains(&s.label) {
                groups.push(s.label.clone());
            }
        }
    }
    BAR_METRICS
        .iter()
        .map(|&(metric, unit)| {
            let series = report
                .entries
                .iter()
                .map(|e| {
                    let (v, sd): (Vec<f64>, Vec<f64>) = groups
                        .iter()
                        .map(|g| {
                            e.segment(g)
                                .map_or((f64::NAN, 0.0), |s| metric_stat(s, metric))
                        })
                        .unzip();
                    (format!("{} {}", e.controller, e.weather), v, sd)
                })
                .collect();
            let chart = BarChart {
                title: format!("{title}: {metric}"),
                y_label: format!("{metric} ({unit})"),
                groups: groups.clone(),
                series,
            };
            (metric, chart.to_svg())
        })
        .collect()
}

fn compare(a: &CompareArgs) -> Result<ExitCode> {
    if a.seeds == 0 {
        bail!("--seeds must be at least 1");
    }
    let kinds: Vec<ControllerKind> = if a.controller.is_empty() {
        vec![
            ControllerKind::A,
            ControllerKind::B,
            ControllerKind::Prop,
            ControllerKind::PropS,
        ]
    } else {
        let mut v = Vec::new();
        for c in &a.controller {
            let k = parse_controller(c)?;
            if !v.contains(&k) {
                v.push(k);
            }
        }
        v
    };

    let mut loaded = Vec::new();
    let mut stems: Vec<String> = Vec::new();
    for p in &a.scenario {
        let (sc, text) = load_scenario(p)?;
        let stem = p
            .file_stem()
            .map_or("scenario".into(), |s| s.to_string_lossy().into_owned());
        if stems.contains(&stem) {
            bail!("two scenarios share the file name `{stem}`; rename one");
        }
        stems.push(stem);
        loaded.push((p.clone(), sc, text));
    }

    // one flat batch so every run shares the worker pool
    let mut runs = Vec::new();
    let mut cells = Vec::new();
    let mut all_seeds = Vec::new();
    for (i, (_, sc, _)) in loaded.iter().enumerate() {
        let base = a.seed.unwrap_or(sc.run.seed);
        let weathers: Vec<Weather> = if a.preset.is_empty() {
            vec![sc.vehicle.preset]
        } else {
            a.preset.iter().map(|p| p.weather()).collect()
        };
        for &w in &weathers {
            for &k in &kinds {
                let start = runs.len();
                runs.extend(
                    sc.with_seed(base)
                        .with_controller(k)
                        .with_weather(w)
                        .seeds(a.seeds),
                );
                cells.push((i, k, w, start..runs.len()));
            }
        }
        all_seeds.extend(base..base + a.seeds as u64);
    }
    all_seeds.sort_unstable();
    all_seeds.dedup();

    let manifest = Manifest::new(
        "compare",
        &loaded
            .iter()
            .map(|(p, _, t)| (p.clone(), t.clone()))
            .collect::<Vec<_>>(),
        &a.out,
        json!({
            "controllers": kinds.iter().map(|k| k.name()).collect::<Vec<_>>(),
            "presets": a.preset.iter().map(|p| weather_name(p.weather())).collect::<Vec<_>>(),
            "seed": a.seed,
            "seeds": a.seeds,
        }),
        &all_seeds,
    );

    let outcomes = batch(&runs);
    let mut reports: Vec<Report> = vec![Report::default(); loaded.len()];
    for (i, k, w, range) in cells {
        let metrics = &loaded[i].1.metrics;
        reports[i].entries.push(ControllerReport::from_outcomes(
            k.name(),
            weather_name(w),
            &outcomes[range],
            metrics,
        ));
    }

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut json_reports = serde_json::Map::new();
    let mut failures = 0;
    for (stem, report) in stems.iter().zip(&reports) {
        let text = report.to_text();
        write(
            &a.out.join(format!("{stem}.csv")),
            &(manifest.csv_comment() + &report.to_csv()),
        )?;
        write(
            &a.out.join(format!("{stem}.txt")),
            &format!("manifest_sha256: {}\n{text}", manifest.hash),
        )?;
        for (metric, svg) in bar_charts(stem, report) {
            write(
                &a.out.join(format!("{stem}_{metric}.svg")),
                &manifest.stamp_svg(&svg),
            )?;
        }
        failures += report
            .entries
            .iter()
            .map(|e| e.failures.len())
            .sum::<usize>();
        json_reports.insert(stem.clone(), serde_json::from_str(&report.to_json()?)?);
        println!("== {stem}");
        print!("{text}");
    }
    write_json(
        &a.out.join("comparison.json"),
        &json!({
            "schema": "slipsteer.comparison",
            "schema_version": COMPARISON_SCHEMA_VERSION,
            "manifest": manifest.value,
            "manifest_sha256": manifest.hash,
            "reports": json_reports,
        }),
    )?;
    manifest.write(&a.out)?;
    if failures > 0 {
        eprintln!(
            "slipsteer: {failures} of {} runs aborted; see the tables",
            outcomes.len()
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn figures(a: &FiguresArgs) -> Result<ExitCode> {
    let mut which = Vec::new();
    for f in &a.figure {
        if f.eq_ignore_ascii_case("all") {
            which.extend(FigureName::ALL);
        } else {
            which.push(FigureName::parse(f.trim())?);
        }
    }
    let mut seen = Vec::new();
    which.retain(|f| {
        let fresh = !seen.contains(f);
        seen.push(*f);
        fresh
    });
    let manifest = Manifest::new(
        "figures",
        &[],
        &a.out,
        json!({ "figures": which.iter().map(|f| f.name()).collect::<Vec<_>>() }),
        &[],
    );
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for f in which {
        let fig = figure(f)?;
        write(
            &a.out.join(format!("{}.csv", fig.name)),
            &(manifest.csv_comment() + &fig.to_csv()),
        )?;
        write(
            &a.out.join(format!("{}.svg", fig.name)),
            &manifest.stamp_svg(&fig.svg),
        )?;
        println!("{}: {} rows", fig.name, fig.rows.len());
    }
    manifest.write(&a.out)?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Simulate(a) => simulate(a),
        Cmd::Compare(a) => compare(a),
        Cmd::Figures(a) => figures(a),
    };
    result.unwrap_or_else(|e| {
        eprintln!("slipsteer: error: {e:#}");
        ExitCode::from(2)
    })
}
