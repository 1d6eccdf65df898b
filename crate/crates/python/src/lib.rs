//! Python bindings: patterns, simulation, K-functions, fits, R selection, residuals and studies.
//! Structured results come back as plain dicts and lists.

use std::path::PathBuf;

use kcontrast::diagnostics::{
    default_r_grid, oracle_r_grid, residual_selection, select_r_oracle_at, EvalGrid, ResidualCriterion,
    ResidualSelectOptions,
};
use kcontrast::fit::{fit_local_problem, fit_two_stage, fit_unpenalized};
use kcontrast::simulate::scenario_pattern;
use kcontrast::{
    make_lag_grid, run_mc_study, select_bandwidth, simulate_inhomogeneous, smooth_residual_field, theoretical_k,
    BandwidthRule, ContrastConfig, ContrastProblem, FitOptions, FitPlan, FittedIntensity, Interval, KEstimator,
    LocalFitOptions, LocalPenalty, LogLinearFamily, PenaltySpec, Point, PointPattern, ResidualOptions, ScenarioId,
    ScenarioSpec, StudyConfig, WeightingIntensity, Window,
};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

create_exception!(kcontrast, KContrastError, PyException, "A kcontrast computation failed.");

fn to_pyerr(e: kcontrast::Error) -> PyErr {
    use kcontrast::Error as E;
    match e {
        E::InvalidWindow(_)
        | E::InvalidPattern(_)
        | E::InvalidModel(_)
        | E::InvalidGrid(_)
        | E::InvalidWeight { .. }
        | E::IndexOutOfRange { .. }
        | E::Config(_)
        | E::Parse(_) => PyValueError::new_err(e.to_string()),
        other => KContrastError::new_err(other.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for kcontrast::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(to_pyerr)
    }
}

fn to_py<T: Serialize>(py: Python<'_>, v: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| KContrastError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

pub fn parse_window(v: &[f64]) -> kcontrast::Result<Window> {
    match *v {
        [x0, x1, y0, y1] => Ok(Window::spatial(Interval::new(x0, x1)?, Interval::new(y0, y1)?)),
        [x0, x1, y0, y1, t0, t1] => Ok(Window::spatio_temporal(
            Interval::new(x0, x1)?,
            Interval::new(y0, y1)?,
            Interval::new(t0, t1)?,
        )),
        _ => Err(kcontrast::Error::Config("a window takes 4 or 6 numbers".into())),
    }
}

fn window_list(w: &Window) -> Vec<f64> {
    let mut v = vec![w.x.lo, w.x.hi, w.y.lo, w.y.hi];
    if let Some(t) = w.t {
        v.extend([t.lo, t.hi]);
    }
    v
}

/// The standard lag grid unless `n_r` or `n_h` is given.
pub fn contrast_for(pattern: &PointPattern, n_r: Option<usize>, n_h: Option<usize>) -> kcontrast::Result<ContrastConfig> {
    if n_r.is_none() && n_h.is_none() {
        return ContrastConfig::standard(pattern);
    }
    let st = pattern.is_spatio_temporal();
    let n_h = if st { Some(n_h.unwrap_or(15)) } else { n_h };
    let grid = make_lag_grid(pattern.window(), n_r.unwrap_or(if st { 15 } else { 153 }), n_h)?;
    Ok(ContrastConfig::new(grid))
}

fn fit_options(seed: u64, restarts: Option<usize>, compute_se: bool) -> FitOptions {
    let mut f = FitOptions::seeded(seed);
    if let Some(r) = restarts {
        f.minimize.restarts = r.max(1);
    }
    f.compute_se = compute_se;
    f
}

/// A point pattern in a rectangular window (or box, with times).
#[pyclass(name = "Pattern", module = "kcontrast", frozen)]
pub struct Pattern {
    inner: PointPattern,
}

#[pymethods]
impl Pattern {
    #[new]
    #[pyo3(signature = (x, y, t=None, window=None))]
    fn new(x: Vec<f64>, y: Vec<f64>, t: Option<Vec<f64>>, window: Option<Vec<f64>>) -> PyResult<Self> {
        if x.len() != y.len() || t.as_ref().is_some_and(|t| t.len() != x.len()) {
            return Err(PyValueError::new_err("coordinate lists differ in length"));
        }
        let window = match window {
            Some(w) => parse_window(&w).py()?,
            None if t.is_some() => Window::unit_cube(),
            None => Window::unit_square(),
        };
        let points = (0..x.len())
            .map(|i| Point::new(x[i], y[i], t.as_ref().map_or(0.0, |t| t[i])))
            .collect();
        Ok(Self {
            inner: PointPattern::new(points, window).py()?,
        })
    }

    /// Reads a CSV with header `x,y` or `x,y,t`; `#` lines are skipped.
    #[staticmethod]
    #[pyo3(signature = (path, window=None))]
    fn read_csv(path: PathBuf, window: Option<Vec<f64>>) -> PyResult<Self> {
        let window = window.map(|w| parse_window(&w)).transpose().py()?;
        Ok(Self {
            inner: kcontrast::read_pattern_csv(&path, window).py()?,
        })
    }

    fn write_csv(&self, path: PathBuf) -> PyResult<()> {
        kcontrast::write_pattern_csv(&path, &self.inner, "").py()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn x(&self) -> Vec<f64> {
        self.inner.points().iter().map(|p| p.x).collect()
    }

    #[getter]
    fn y(&self) -> Vec<f64> {
        self.inner.points().iter().map(|p| p.y).collect()
    }

    #[getter]
    fn t(&self) -> Option<Vec<f64>> {
        self.inner
            .is_spatio_temporal()
            .then(|| self.inner.points().iter().map(|p| p.t).collect())
    }

    /// `[x0, x1, y0, y1]` or `[x0, x1, y0, y1, t0, t1]`.
    #[getter]
    fn window(&self) -> Vec<f64> {
        window_list(self.inner.window())
    }

    fn average_intensity(&self) -> f64 {
        self.inner.average_intensity()
    }

    fn __repr__(&self) -> String {
        format!("Pattern(n={}, window={:?})", self.inner.len(), window_list(self.inner.window()))
    }
}

/// Simulates one of the scenarios S1, S2, S3, ST1, ST2.
#[pyfunction]
#[pyo3(signature = (scenario, seed, theta=None))]
fn simulate(py: Python<'_>, scenario: &str, seed: u64, theta: Option<Vec<f64>>) -> PyResult<Pattern> {
    let id: ScenarioId = scenario.parse().py()?;
    let spec = ScenarioSpec::new(id, theta.unwrap_or_else(|| id.default_theta())).py()?;
    let inner = py.detach(|| scenario_pattern(&spec, seed)).py()?;
    Ok(Pattern { inner })
}

/// Simulates a Poisson process with intensity `model` (e.g. `exp(a+b*x)`) at `theta`.
#[pyfunction]
#[pyo3(signature = (model, theta, seed, window=None))]
fn simulate_model(py: Python<'_>, model: &str, theta: Vec<f64>, seed: u64, window: Option<Vec<f64>>) -> PyResult<Pattern> {
    let m = LogLinearFamily::parse(model).and_then(|f| f.with_theta(theta)).py()?;
    let window = match window {
        Some(w) => parse_window(&w).py()?,
        None => Window::unit_square(),
    };
    let inner = py.detach(|| simulate_inhomogeneous(&m, &window, seed)).py()?;
    Ok(Pattern { inner })
}

/// K-function estimate; returns `{kind, r, h, values}` with `values` row-major over (r, h).
#[pyfunction]
#[pyo3(signature = (pattern, estimator="homogeneous", model=None, theta=None, point=None, n_r=None, n_h=None))]
#[allow(clippy::too_many_arguments)]
fn k_function(
    py: Python<'_>,
    pattern: &Pattern,
    estimator: &str,
    model: Option<&str>,
    theta: Option<Vec<f64>>,
    point: Option<usize>,
    n_r: Option<usize>,
    n_h: Option<usize>,
) -> PyResult<Py<PyAny>> {
    let p = &pattern.inner;
    let grid = contrast_for(p, n_r, n_h).py()?.grid;
    let weights = match (model, theta) {
        (Some(m), Some(t)) => Some(WeightingIntensity::Model(
            LogLinearFamily::parse(m).and_then(|f| f.with_theta(t)).py()?,
        )),
        (None, None) => None,
        _ => return Err(PyValueError::new_err("model and theta go together")),
    };
    let need_w = || weights.clone().ok_or_else(|| PyValueError::new_err("this estimator needs model and theta"));
    let need_i = || point.ok_or_else(|| PyValueError::new_err("local estimators need a point index"));
    let est = py.detach(|| KEstimator::new(p, &grid)).py()?;
    let k = match estimator {
        "homogeneous" => est.homogeneous(),
        "inhomogeneous" => est.inhomogeneous(&need_w()?).py()?,
        "local-homogeneous" => est.local_homogeneous(need_i()?).py()?,
        "local-inhomogeneous" => est.local_inhomogeneous(need_i()?, &need_w()?).py()?,
        "theoretical" => theoretical_k(&grid),
        other => return Err(PyValueError::new_err(format!("unknown estimator '{other}'"))),
    };
    let out = serde_json::json!({
        "kind": k.kind,
        "point_index": k.point_index,
        "r": k.grid.r_values(),
        "h": k.grid.h_values(),
        "values": k.values,
    });
    to_py(py, &out)
}

/// Minimum-contrast fit, penalized around the unpenalized estimate when `penalty_r` is given.
#[pyfunction]
#[pyo3(signature = (pattern, model, seed, penalty_r=None, tau=None, n_r=None, n_h=None, restarts=None, compute_se=true))]
#[allow(clippy::too_many_arguments)]
fn fit(
    py: Python<'_>,
    pattern: &Pattern,
    model: &str,
    seed: u64,
    penalty_r: Option<f64>,
    tau: Option<f64>,
    n_r: Option<usize>,
    n_h: Option<usize>,
    restarts: Option<usize>,
    compute_se: bool,
) -> PyResult<Py<PyAny>> {
    let family = LogLinearFamily::parse(model).py()?;
    let config = contrast_for(&pattern.inner, n_r, n_h).py()?;
    let penalty = match (penalty_r, tau) {
        (Some(radius), tau) => Some(PenaltySpec { radius, tau }),
        (None, Some(_)) => return Err(PyValueError::new_err("tau needs penalty_r")),
        (None, None) => None,
    };
    let opts = fit_options(seed, restarts, compute_se);
    let result = py
        .detach(|| {
            let problem = ContrastProblem::new(&pattern.inner, &family, &config)?;
            fit_two_stage(&problem, penalty, &opts)
        })
        .py()?;
    to_py(py, &result)
}

/// Per-point fits; returns the full result with `points` aligned to the pattern.
#[pyfunction]
#[pyo3(signature = (pattern, model, seed, penalty_r=None, n_r=None, n_h=None, restarts=None, compute_se=false))]
#[allow(clippy::too_many_arguments)]
fn local_fit(
    py: Python<'_>,
    pattern: &Pattern,
    model: &str,
    seed: u64,
    penalty_r: Option<f64>,
    n_r: Option<usize>,
    n_h: Option<usize>,
    restarts: Option<usize>,
    compute_se: bool,
) -> PyResult<Py<PyAny>> {
    let family = LogLinearFamily::parse(model).py()?;
    let config = contrast_for(&pattern.inner, n_r, n_h).py()?;
    let opts = LocalFitOptions {
        fit: fit_options(seed, restarts, compute_se),
        penalty: penalty_r.map_or(LocalPenalty::None, LocalPenalty::Fixed),
        point_phi: None,
    };
    let result = py
        .detach(|| {
            let problem = ContrastProblem::new(&pattern.inner, &family, &config)?;
            fit_local_problem(&problem, &opts)
        })
        .py()?;
    to_py(py, &result)
}

fn residual_criterion(name: &str) -> PyResult<ResidualCriterion> {
    match name {
        "absolute" => Ok(ResidualCriterion::Absolute),
        "signed" => Ok(ResidualCriterion::Signed),
        "integrated-absolute" => Ok(ResidualCriterion::IntegratedAbsolute),
        other => Err(PyValueError::new_err(format!("unknown criterion '{other}'"))),
    }
}

/// Chooses the penalty radius by the residual rule, or by the oracle rule when `truth` is given.
/// Returns the selection trace with the fit at the chosen radius under `fit`.
#[pyfunction]
#[pyo3(signature = (pattern, model, seed, truth=None, r_grid=None, criterion="absolute", bandwidth=None, n_r=None, n_h=None, restarts=None))]
#[allow(clippy::too_many_arguments)]
fn select_r(
    py: Python<'_>,
    pattern: &Pattern,
    model: &str,
    seed: u64,
    truth: Option<Vec<f64>>,
    r_grid: Option<Vec<f64>>,
    criterion: &str,
    bandwidth: Option<f64>,
    n_r: Option<usize>,
    n_h: Option<usize>,
    restarts: Option<usize>,
) -> PyResult<Py<PyAny>> {
    let family = LogLinearFamily::parse(model).py()?;
    let config = contrast_for(&pattern.inner, n_r, n_h).py()?;
    let opts = fit_options(seed, restarts, false);
    let residual = ResidualSelectOptions {
        criterion: residual_criterion(criterion)?,
        bandwidth,
        fit: opts.clone(),
        ..Default::default()
    };
    let (sel, fit) = py
        .detach(|| {
            let problem = ContrastProblem::new(&pattern.inner, &family, &config)?;
            let center = fit_unpenalized(&problem, &opts)?.theta_hat;
            match &truth {
                Some(t) => {
                    let grid = r_grid.clone().unwrap_or_else(oracle_r_grid);
                    select_r_oracle_at(&problem, &center, t, &grid, &opts).map(|(s, f)| (s, Some(f)))
                }
                None => {
                    let grid = r_grid.clone().unwrap_or_else(default_r_grid);
                    residual_selection(&problem, &center, &grid, &residual)
                }
            }
        })
        .py()?;
    to_py(py, &serde_json::json!({ "selection": sel, "chosen_R": sel.chosen_r, "fit": fit }))
}

/// Smoothed residual field of `model` at `theta`; `values` are row-major with `y` outer.
#[pyfunction]
#[pyo3(signature = (pattern, model, theta, bandwidth=None, cells=128, edge_correction=true))]
fn residual_field(
    py: Python<'_>,
    pattern: &Pattern,
    model: &str,
    theta: Vec<f64>,
    bandwidth: Option<f64>,
    cells: usize,
    edge_correction: bool,
) -> PyResult<Py<PyAny>> {
    let m = LogLinearFamily::parse(model).and_then(|f| f.with_theta(theta)).py()?;
    let opts = ResidualOptions {
        grid: EvalGrid { nx: cells, ny: cells },
        edge_correction,
        ..Default::default()
    };
    let p = &pattern.inner;
    let field = py
        .detach(|| {
            let sigma = match bandwidth {
                Some(b) => b,
                None => select_bandwidth(p, BandwidthRule::NormalScale)?.spatial(),
            };
            smooth_residual_field(p, &FittedIntensity::Model(m), sigma, &opts)
        })
        .py()?;
    to_py(py, &serde_json::json!({ "field": field, "integral": field.integral() }))
}

/// Monte Carlo study. `plan` is one of unpenalized, fixed-r, oracle-r, residual-r, local.
#[pyfunction]
#[pyo3(signature = (scenario, replicates, seed, plan="unpenalized", radius=None, out=None))]
fn mc_study(
    py: Python<'_>,
    scenario: &str,
    replicates: usize,
    seed: u64,
    plan: &str,
    radius: Option<f64>,
    out: Option<PathBuf>,
) -> PyResult<Py<PyAny>> {
    let id: ScenarioId = scenario.parse().py()?;
    let plan = match (plan, radius) {
        ("unpenalized", None) => FitPlan::Unpenalized,
        ("fixed-r", Some(radius)) => FitPlan::FixedR { radius },
        ("oracle-r", None) => FitPlan::OracleR { r_grid: None },
        ("residual-r", None) => FitPlan::ResidualR {
            r_grid: None,
            options: Default::default(),
        },
        ("local", radius) => FitPlan::Local { radius },
        (p, r) => return Err(PyValueError::new_err(format!("plan '{p}' with radius {r:?} is not valid"))),
    };
    let mut config = StudyConfig::new(id, replicates, seed, plan);
    config.output = out;
    let report = py.detach(|| run_mc_study(&config)).py()?;
    let mut v = serde_json::to_value(&report).map_err(|e| KContrastError::new_err(e.to_string()))?;
    v["mean_R_used"] = serde_json::json!(report.mean_r_used());
    to_py(py, &v)
}

#[pymodule]
#[pyo3(name = "kcontrast")]
fn kcontrast_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    register(m)
}

/// Adds the classes and functions to `m`.
pub fn register(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("KContrastError", m.py().get_type::<KContrastError>())?;
    m.add_class::<Pattern>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_model, m)?)?;
    m.add_function(wrap_pyfunction!(k_function, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(local_fit, m)?)?;
    m.add_function(wrap_pyfunction!(select_r, m)?)?;
    m.add_function(wrap_pyfunction!(residual_field, m)?)?;
    m.add_function(wrap_pyfunction!(mc_study, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn windows_parse_and_print_back() {
        let w = parse_window(&[0.0, 2.0, 0.0, 1.0]).unwrap();
        assert_eq!(window_list(&w), vec![0.0, 2.0, 0.0, 1.0]);
        let c = parse_window(&[0.0, 1.0, 0.0, 1.0, 0.0, 3.0]).unwrap();
        assert_eq!(c.duration(), 3.0);
        assert!(parse_window(&[0.0, 1.0, 0.0]).is_err());
        assert!(parse_window(&[1.0, 0.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn default_grid_matches_standard() {
        let p = scenario_pattern(&ScenarioSpec::standard(ScenarioId::S3), 1).unwrap();
        assert_eq!(contrast_for(&p, None, None).unwrap(), ContrastConfig::standard(&p).unwrap());
        assert_eq!(contrast_for(&p, Some(20), None).unwrap().grid.n_r(), 20);
    }
}
