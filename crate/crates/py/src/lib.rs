//! Python bindings: run scenarios, batch comparisons and analysis figures.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use slipsteer::analysis::{figure as build_figure, FigureName};
use slipsteer::metrics::{segment_metrics, ControllerReport, Report};
use slipsteer::sim::{batch, run_partial, ControllerKind, PathConfig, Scenario, TraceRow, Weather};
use slipsteer::SteerError;

fn value_err(e: SteerError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn from_json<'py>(py: Python<'py>, s: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (s,))
}

fn weather_name(w: Weather) -> &'static str {
    match w {
        Weather::Clear => "clear",
        Weather::Rainy => "rainy",
    }
}

fn load(
    scenario: &str,
    controller: Option<&str>,
    seed: Option<u64>,
    preset: Option<&str>,
) -> PyResult<Scenario> {
    let mut sc = Scenario::from_toml_str(scenario).map_err(value_err)?;
    if let Some(c) = controller {
        sc.controller.kind = ControllerKind::parse(c).map_err(value_err)?;
    }
    if let Some(s) = seed {
        sc.run.seed = s;
    }
    if let Some(p) = preset {
        sc.vehicle.preset = Weather::parse(p).map_err(value_err)?;
    }
    Ok(sc)
}

type Column = (&'static str, fn(&TraceRow) -> f64);

const COLUMNS: [Column; 20] = [
    ("t", |r| r.t),
    ("s_ref", |r| r.s_ref),
    ("x", |r| r.x),
    ("y", |r| r.y),
    ("theta", |r| r.theta),
    ("beta", |r| r.beta),
    ("r", |r| r.r),
    ("phi", |r| r.phi),
    ("v", |r| r.v),
    ("beta_hat", |r| r.beta_hat),
    ("y_e", |r| r.y_e),
    ("theta_e", |r| r.theta_e),
    ("x_e", |r| r.x_e),
    ("sigma_k", |r| r.sigma_k),
    ("kappa_ref", |r| r.kappa_ref),
    ("c", |r| r.c),
    ("r_kin", |r| r.r_kin),
    ("omega", |r| r.omega),
    ("a_lat", |r| r.a_lat),
    ("a_ref", |r| r.a_ref),
];

/// Run one scenario given as TOML text.
///
/// Returns a dict with `completed`, `error`, `reached_end`, `columns`
/// (name → list of floats), `segments` (per-segment metrics) and `csv`
/// (the full trace). A mid-run abort is reported through `error`; invalid
/// scenarios raise `ValueError`.
#[pyfunction]
#[pyo3(signature = (scenario, controller=None, seed=None, preset=None))]
fn simulate<'py>(
    py: Python<'py>,
    scenario: &str,
    controller: Option<&str>,
    seed: Option<u64>,
    preset: Option<&str>,
) -> PyResult<Bound<'py, PyDict>> {
    let sc = load(scenario, controller, seed, preset)?;
    let (trace, aborted) = py.detach(|| run_partial(&sc)).map_err(value_err)?;
    let metrics = serde_json::to_string(&segment_metrics(&trace, &sc.metrics))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;

    let out = PyDict::new(py);
    out.set_item("controller", trace.controller.name())?;
    out.set_item("weather", weather_name(trace.weather))?;
    out.set_item("seed", trace.seed)?;
    out.set_item("completed", aborted.is_none())?;
    out.set_item("error", aborted.map(|e| e.to_string()))?;
    out.set_item("reached_end", trace.reached_end)?;
    let cols = PyDict::new(py);
    for (name, f) in COLUMNS {
        let v: Vec<f64> = trace.rows.iter().map(f).collect();
        cols.set_item(name, PyList::new(py, v)?)?;
    }
    out.set_item("columns", cols)?;
    out.set_item("segments", from_json(py, &metrics)?)?;
    out.set_item("csv", trace.csv_string())?;
    Ok(out)
}

/// Batch `controllers × presets × seeds` on one scenario and return the
/// per-segment comparison as a dict (`entries` list).
#[pyfunction]
#[pyo3(signature = (scenario, controllers, seeds=1, presets=None))]
fn compare<'py>(
    py: Python<'py>,
    scenario: &str,
    controllers: Vec<String>,
    seeds: usize,
    presets: Option<Vec<String>>,
) -> PyResult<Bound<'py, PyAny>> {
    if seeds == 0 {
        return Err(PyValueError::new_err("seeds must be at least 1"));
    }
    let sc = load(scenario, None, None, None)?;
    let kinds = controllers
        .iter()
        .map(|c| ControllerKind::parse(c).map_err(value_err))
        .collect::<PyResult<Vec<_>>>()?;
    let weathers = match presets {
        Some(p) => p
            .iter()
            .map(|w| Weather::parse(w).map_err(value_err))
            .collect::<PyResult<Vec<_>>>()?,
        None => vec![sc.vehicle.preset],
    };
    let report = py.detach(|| {
        let mut report = Report::default();
        for &w in &weathers {
            for &k in &kinds {
                let out = batch(&sc.with_controller(k).with_weather(w).seeds(seeds));
                report.entries.push(ControllerReport::from_outcomes(
                    k.name(),
                    weather_name(w),
                    &out,
                    &sc.metrics,
                ));
            }
        }
        report
    });
    from_json(py, &report.to_json().map_err(value_err)?)
}

/// Regenerate an analysis figure: returns `(header, rows, svg)`.
#[pyfunction]
fn figure(py: Python<'_>, name: &str) -> PyResult<(Vec<String>, Vec<Vec<f64>>, String)> {
    let which = FigureName::parse(name).map_err(value_err)?;
    let fig = py.detach(|| build_figure(which)).map_err(value_err)?;
    Ok((
        fig.header.iter().map(|s| s.to_string()).collect(),
        fig.rows,
        fig.svg,
    ))
}

/// A complete scenario (every default spelled out) for a path preset.
#[pyfunction]
#[pyo3(signature = (path="l", controller="PROP-S"))]
fn default_scenario(path: &str, controller: &str) -> PyResult<String> {
    let kind = ControllerKind::parse(controller).map_err(value_err)?;
    let sc = Scenario::new(PathConfig::preset(path), kind);
    sc.validate().map_err(value_err)?;
    Ok(sc.to_toml_string())
}

#[pymodule]
fn slipsteer_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(figure, m)?)?;
    m.add_function(wrap_pyfunction!(default_scenario, m)?)?;
    Ok(())
}
