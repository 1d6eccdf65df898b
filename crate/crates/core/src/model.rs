//! Observation windows, point patterns, lag grids and log-linear intensity models.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Closed real interval `[lo, hi]` with `hi > lo`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || hi <= lo {
            return Err(Error::InvalidWindow(format!(
                "interval [{lo}, {hi}] must be finite with positive length"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn unit() -> Self {
        Self { lo: 0.0, hi: 1.0 }
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// Rectangular observation window, optionally extended by a time interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Window {
    pub x: Interval,
    pub y: Interval,
    pub t: Option<Interval>,
}

impl<'de> Deserialize<'de> for Window {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            x: Interval,
            y: Interval,
            #[serde(default)]
            t: Option<Interval>,
        }
        let raw = Raw::deserialize(d)?;
        let check = |i: Interval| Interval::new(i.lo, i.hi).map_err(serde::de::Error::custom);
        Ok(Window {
            x: check(raw.x)?,
            y: check(raw.y)?,
            t: raw.t.map(check).transpose()?,
        })
    }
}

impl Window {
    pub fn spatial(x: Interval, y: Interval) -> Self {
        Self { x, y, t: None }
    }

    pub fn spatio_temporal(x: Interval, y: Interval, t: Interval) -> Self {
        Self { x, y, t: Some(t) }
    }

    pub fn unit_square() -> Self {
        Self::spatial(Interval::unit(), Interval::unit())
    }

    pub fn unit_cube() -> Self {
        Self::spatio_temporal(Interval::unit(), Interval::unit(), Interval::unit())
    }

    pub fn is_spatio_temporal(&self) -> bool {
        self.t.is_some()
    }

    /// |W|
    pub fn area(&self) -> f64 {
        self.x.len() * self.y.len()
    }

    /// |T|, or 1 for a purely spatial window.
    pub fn duration(&self) -> f64 {
        self.t.map_or(1.0, |t| t.len())
    }

    /// |W||T|
    pub fn volume(&self) -> f64 {
        self.area() * self.duration()
    }

    /// Largest spatial distance between two points of the window.
    pub fn diagonal(&self) -> f64 {
        self.x.len().hypot(self.y.len())
    }

    pub fn contains(&self, p: &Point) -> bool {
        self.x.contains(p.x)
            && self.y.contains(p.y)
            && self.t.is_none_or(|t| t.contains(p.t))
    }

    /// Corners of the window box; 4 spatial or 8 spatio-temporal.
    pub fn corners(&self) -> Vec<Point> {
        let mut out = Vec::with_capacity(8);
        let ts: Vec<f64> = match self.t {
            Some(t) => vec![t.lo, t.hi],
            None => vec![0.0],
        };
        for &x in &[self.x.lo, self.x.hi] {
            for &y in &[self.y.lo, self.y.hi] {
                for &t in &ts {
                    out.push(Point { x, y, t });
                }
            }
        }
        out
    }
}

/// A location in space, or space-time. `t` is 0 and ignored for spatial patterns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub t: f64,
}

impl Point {
    pub fn spatial(x: f64, y: f64) -> Self {
        Self { x, y, t: 0.0 }
    }

    pub fn new(x: f64, y: f64, t: f64) -> Self {
        Self { x, y, t }
    }

    pub fn spatial_distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Finite set of distinct points inside a window.
#[derive(Debug, Clone, PartialEq)]
pub struct PointPattern {
    points: Vec<Point>,
    window: Window,
}

impl PointPattern {
    /// Validates that every point lies in the (closed) window and that no two points coincide.
    pub fn new(points: Vec<Point>, window: Window) -> Result<Self> {
        for (i, p) in points.iter().enumerate() {
            let finite = p.x.is_finite() && p.y.is_finite() && p.t.is_finite();
            if !finite || !window.contains(p) {
                return Err(Error::InvalidPattern(format!(
                    "point {i} ({}, {}, {}) lies outside the window",
                    p.x, p.y, p.t
                )));
            }
        }
        let mut order: Vec<usize> = (0..points.len()).collect();
        let key = |p: &Point| (p.x, p.y, if window.is_spatio_temporal() { p.t } else { 0.0 });
        order.sort_by(|&a, &b| {
            let (ka, kb) = (key(&points[a]), key(&points[b]));
            ka.0.total_cmp(&kb.0)
                .then(ka.1.total_cmp(&kb.1))
                .then(ka.2.total_cmp(&kb.2))
        });
        for w in order.windows(2) {
            if key(&points[w[0]]) == key(&points[w[1]]) {
                return Err(Error::InvalidPattern(format!(
                    "points {} and {} are identical",
                    w[0].min(w[1]),
                    w[0].max(w[1])
                )));
            }
        }
        let points = if window.is_spatio_temporal() {
            points
        } else {
            points.into_iter().map(|p| Point { t: 0.0, ..p }).collect()
        };
        Ok(Self { points, window })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_spatio_temporal(&self) -> bool {
        self.window.is_spatio_temporal()
    }

    /// n / (|W||T|)
    pub fn average_intensity(&self) -> f64 {
        self.points.len() as f64 / self.window.volume()
    }

    /// Drops the time coordinate.
    pub fn spatial_projection(&self) -> Result<PointPattern> {
        let w = Window::spatial(self.window.x, self.window.y);
        let mut seen = std::collections::HashSet::new();
        let pts = self
            .points
            .iter()
            .filter(|p| seen.insert((p.x.to_bits(), p.y.to_bits())))
            .map(|p| Point::spatial(p.x, p.y))
            .collect();
        PointPattern::new(pts, w)
    }

    pub(crate) fn require(&self, needed: usize) -> Result<()> {
        if self.len() < needed {
            return Err(Error::InsufficientPoints {
                needed,
                found: self.len(),
            });
        }
        Ok(())
    }
}

/// A covariate function f_j entering the log-linear predictor.
#[derive(Clone)]
pub enum Covariate {
    Constant,
    X,
    Y,
    T,
    Custom {
        name: String,
        f: Arc<dyn Fn(&Point) -> f64 + Send + Sync>,
    },
}

impl Covariate {
    pub fn custom(name: impl Into<String>, f: impl Fn(&Point) -> f64 + Send + Sync + 'static) -> Self {
        Covariate::Custom {
            name: name.into(),
            f: Arc::new(f),
        }
    }

    pub fn eval(&self, p: &Point) -> f64 {
        match self {
            Covariate::Constant => 1.0,
            Covariate::X => p.x,
            Covariate::Y => p.y,
            Covariate::T => p.t,
            Covariate::Custom { f, .. } => f(p),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Covariate::Constant => "1",
            Covariate::X => "x",
            Covariate::Y => "y",
            Covariate::T => "t",
            Covariate::Custom { name, .. } => name,
        }
    }

    /// Affine in the coordinates, so the predictor attains its extremes at window corners.
    pub fn is_affine(&self) -> bool {
        !matches!(self, Covariate::Custom { .. })
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "1" => Ok(Covariate::Constant),
            "x" => Ok(Covariate::X),
            "y" => Ok(Covariate::Y),
            "t" => Ok(Covariate::T),
            other => Err(Error::InvalidModel(format!(
                "unknown covariate '{other}' (custom covariates are only available through the library API)"
            ))),
        }
    }
}

impl fmt::Debug for Covariate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Covariate({})", self.name())
    }
}

impl PartialEq for Covariate {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Covariate::Custom { f: a, .. }, Covariate::Custom { f: b, .. }) => Arc::ptr_eq(a, b),
            _ => self.name() == other.name(),
        }
    }
}

impl Serialize for Covariate {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Covariate {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let name = String::deserialize(d)?;
        Covariate::parse(&name).map_err(serde::de::Error::custom)
    }
}

/// The log-linear family λ(u; θ) = exp(Σ_j θ_j f_j(u)), without fixed parameter values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLinearFamily {
    basis: Vec<Covariate>,
    names: Vec<String>,
}

impl LogLinearFamily {
    pub fn new(basis: Vec<Covariate>, names: Vec<String>) -> Result<Self> {
        if basis.is_empty() {
            return Err(Error::InvalidModel("basis must not be empty".into()));
        }
        if basis.len() != names.len() {
            return Err(Error::InvalidModel(format!(
                "{} covariates but {} parameter names",
                basis.len(),
                names.len()
            )));
        }
        Ok(Self { basis, names })
    }

    /// exp(α)
    pub fn constant() -> Self {
        Self::new(vec![Covariate::Constant], vec!["alpha".into()]).unwrap()
    }

    /// exp(βx)
    pub fn slope_x() -> Self {
        Self::new(vec![Covariate::X], vec!["beta".into()]).unwrap()
    }

    /// exp(α + βx)
    pub fn intercept_slope_x() -> Self {
        Self::new(
            vec![Covariate::Constant, Covariate::X],
            vec!["alpha".into(), "beta".into()],
        )
        .unwrap()
    }

    /// Parses `exp(a + b*x + c*y + d*t)`: a sum of named coefficients, each alone (intercept)
    /// or multiplied by one of `x`, `y`, `t` or `1`.
    pub fn parse(formula: &str) -> Result<Self> {
        let compact: String = formula.chars().filter(|c| !c.is_whitespace()).collect();
        let body = compact
            .strip_prefix("exp(")
            .and_then(|b| b.strip_suffix(')'))
            .ok_or_else(|| Error::Parse(format!("model '{formula}' must have the form exp(...)")))?;
        if body.is_empty() {
            return Err(Error::Parse("empty linear predictor".into()));
        }
        let is_name = |s: &str| {
            let mut c = s.chars();
            c.next().is_some_and(|f| f.is_ascii_alphabetic() || f == '_')
                && c.all(|ch| ch.is_ascii_alphanumeric() || ch == '_')
                && !matches!(s, "x" | "y" | "t")
        };
        let mut basis = Vec::new();
        let mut names: Vec<String> = Vec::new();
        for term in body.split('+') {
            let factors: Vec<&str> = term.split('*').collect();
            let (name, cov) = match factors.as_slice() {
                [n] => (*n, Covariate::Constant),
                [a, b] if is_name(a) => (*a, Covariate::parse(b)?),
                [a, b] if is_name(b) => (*b, Covariate::parse(a)?),
                _ => return Err(Error::Parse(format!("cannot read term '{term}' in '{formula}'"))),
            };
            if !is_name(name) {
                return Err(Error::Parse(format!("'{name}' is not a coefficient name")));
            }
            if names.iter().any(|n| n == name) {
                return Err(Error::Parse(format!("coefficient '{name}' appears twice")));
            }
            if basis.contains(&cov) {
                return Err(Error::Parse(format!("covariate '{}' appears twice", cov.name())));
            }
            names.push(name.to_string());
            basis.push(cov);
        }
        Self::new(basis, names)
    }

    /// Inverse of [`LogLinearFamily::parse`].
    pub fn formula(&self) -> String {
        let terms: Vec<String> = self
            .basis
            .iter()
            .zip(&self.names)
            .map(|(c, n)| match c {
                Covariate::Constant => n.clone(),
                other => format!("{n}*{}", other.name()),
            })
            .collect();
        format!("exp({})", terms.join("+"))
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &[Covariate] {
        &self.basis
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn intercept_index(&self) -> Option<usize> {
        self.basis.iter().position(|c| *c == Covariate::Constant)
    }

    pub fn design_row(&self, p: &Point) -> Vec<f64> {
        self.basis.iter().map(|c| c.eval(p)).collect()
    }

    /// Design matrix, row-major `n × dim`.
    pub fn design(&self, points: &[Point]) -> Vec<f64> {
        let mut out = Vec::with_capacity(points.len() * self.dim());
        for p in points {
            out.extend(self.basis.iter().map(|c| c.eval(p)));
        }
        out
    }

    /// Homogeneous method-of-moments start: intercept log(n / volume), slopes zero.
    pub fn initial_theta(&self, n: usize, volume: f64) -> Vec<f64> {
        let mut theta = vec![0.0; self.dim()];
        if let Some(k) = self.intercept_index() {
            theta[k] = ((n.max(1)) as f64 / volume).ln();
        }
        theta
    }

    pub fn with_theta(&self, theta: Vec<f64>) -> Result<IntensityModel> {
        IntensityModel::new(self.clone(), theta)
    }
}

/// A log-linear intensity with fixed parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityModel {
    family: LogLinearFamily,
    theta: Vec<f64>,
}

impl IntensityModel {
    pub fn new(family: LogLinearFamily, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != family.dim() {
            return Err(Error::InvalidModel(format!(
                "basis has {} functions but theta has {} entries",
                family.dim(),
                theta.len()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel(format!("theta {theta:?} is not finite")));
        }
        Ok(Self { family, theta })
    }

    pub fn constant(rate: f64) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::InvalidModel(format!("rate {rate} must be positive")));
        }
        Self::new(LogLinearFamily::constant(), vec![rate.ln()])
    }

    pub fn family(&self) -> &LogLinearFamily {
        &self.family
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn log_intensity(&self, p: &Point) -> f64 {
        self.family
            .basis
            .iter()
            .zip(&self.theta)
            .map(|(c, th)| th * c.eval(p))
            .sum()
    }

    /// λ(p; θ). Fails when the exponent overflows.
    pub fn eval(&self, p: &Point) -> Result<f64> {
        let v = self.log_intensity(p).exp();
        if v.is_finite() && v > 0.0 {
            Ok(v)
        } else {
            Err(Error::Evaluation {
                theta: self.theta.clone(),
            })
        }
    }

    /// Upper bound on λ over the window. Exact at the corners for affine bases;
    /// otherwise a grid search inflated by 5%.
    pub fn upper_bound(&self, window: &Window) -> Result<f64> {
        let log_max = if self.family.basis.iter().all(Covariate::is_affine) {
            window
                .corners()
                .iter()
                .map(|c| self.log_intensity(c))
                .fold(f64::NEG_INFINITY, f64::max)
        } else {
            let res = QuadratureResolution::cubic(64);
            let mut best = f64::NEG_INFINITY;
            for_each_node(window, &res, true, |p, _| {
                best = best.max(self.log_intensity(p));
            });
            best + 0.05f64.ln_1p()
        };
        let bound = log_max.exp();
        if bound.is_finite() && bound > 0.0 {
            Ok(bound)
        } else {
            Err(Error::Evaluation {
                theta: self.theta.clone(),
            })
        }
    }
}

/// Cell counts per axis for midpoint quadrature over a window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureResolution {
    pub nx: usize,
    pub ny: usize,
    pub nt: usize,
}

impl QuadratureResolution {
    pub fn cubic(n: usize) -> Self {
        Self { nx: n, ny: n, nt: n }
    }
}

impl Default for QuadratureResolution {
    fn default() -> Self {
        Self::cubic(256)
    }
}

/// Visits midpoint nodes; the callback gets the node and its cell volume.
/// With `edges` the window boundary is included (used for bound searches).
fn for_each_node(window: &Window, res: &QuadratureResolution, edges: bool, mut f: impl FnMut(&Point, f64)) {
    let axis = |iv: Interval, n: usize| -> Vec<f64> {
        if edges {
            (0..=n).map(|k| iv.lo + iv.len() * k as f64 / n as f64).collect()
        } else {
            (0..n).map(|k| iv.lo + iv.len() * (k as f64 + 0.5) / n as f64).collect()
        }
    };
    let xs = axis(window.x, res.nx);
    let ys = axis(window.y, res.ny);
    let ts = match window.t {
        Some(t) => axis(t, res.nt),
        None => vec![0.0],
    };
    let cell = window.x.len() / res.nx as f64
        * (window.y.len() / res.ny as f64)
        * window.t.map_or(1.0, |t| t.len() / res.nt as f64);
    for &t in &ts {
        for &y in &ys {
            for &x in &xs {
                f(&Point { x, y, t }, cell);
            }
        }
    }
}

/// ∫ λ over the window by midpoint quadrature.
pub fn integrate_intensity(model: &IntensityModel, window: &Window, res: &QuadratureResolution) -> Result<f64> {
    let min_cells = if window.is_spatio_temporal() {
        res.nx.min(res.ny).min(res.nt)
    } else {
        res.nx.min(res.ny)
    };
    if min_cells < 16 {
        return Err(Error::Config(format!(
            "quadrature needs at least 16 cells per axis, got {min_cells}"
        )));
    }
    if !(window.area() > 0.0 && window.duration() > 0.0) {
        return Err(Error::InvalidWindow("window has zero volume".into()));
    }
    let mut total = 0.0;
    for_each_node(window, res, false, |p, cell| {
        total += model.log_intensity(p).exp() * cell;
    });
    if total.is_finite() && total > 0.0 {
        Ok(total)
    } else {
        Err(Error::Evaluation {
            theta: model.theta.clone(),
        })
    }
}

/// Spatial (and optionally temporal) lags at which K-functions are evaluated.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LagGrid {
    r_values: Vec<f64>,
    h_values: Option<Vec<f64>>,
}

impl<'de> Deserialize<'de> for LagGrid {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            r_values: Vec<f64>,
            #[serde(default)]
            h_values: Option<Vec<f64>>,
        }
        let raw = Raw::deserialize(d)?;
        LagGrid::new(raw.r_values, raw.h_values).map_err(serde::de::Error::custom)
    }
}

fn check_axis(name: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::InvalidGrid(format!("{name} axis is empty")));
    }
    if v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(Error::InvalidGrid(format!("{name} values must be positive and finite")));
    }
    if v.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidGrid(format!("{name} values must be strictly increasing")));
    }
    Ok(())
}

impl LagGrid {
    pub fn new(r_values: Vec<f64>, h_values: Option<Vec<f64>>) -> Result<Self> {
        check_axis("r", &r_values)?;
        if let Some(h) = &h_values {
            check_axis("h", h)?;
        }
        Ok(Self { r_values, h_values })
    }

    /// `n` equally spaced values in (0, max].
    pub fn equally_spaced(max: f64, n: usize) -> Vec<f64> {
        (1..=n).map(|k| max * k as f64 / n as f64).collect()
    }

    pub fn r_values(&self) -> &[f64] {
        &self.r_values
    }

    pub fn h_values(&self) -> Option<&[f64]> {
        self.h_values.as_deref()
    }

    pub fn is_spatio_temporal(&self) -> bool {
        self.h_values.is_some()
    }

    pub fn n_r(&self) -> usize {
        self.r_values.len()
    }

    /// Number of temporal lags; 1 for a spatial grid.
    pub fn n_h(&self) -> usize {
        self.h_values.as_ref().map_or(1, Vec::len)
    }

    /// Total number of (r, h) cells.
    pub fn len(&self) -> usize {
        self.n_r() * self.n_h()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn r_min(&self) -> f64 {
        self.r_values[0]
    }

    pub fn r_max(&self) -> f64 {
        *self.r_values.last().unwrap()
    }

    pub fn h_min(&self) -> Option<f64> {
        self.h_values.as_ref().map(|h| h[0])
    }

    pub fn h_max(&self) -> Option<f64> {
        self.h_values.as_ref().map(|h| *h.last().unwrap())
    }

    /// Flat row-major index of lag cell `(ri, hi)`.
    pub fn index(&self, ri: usize, hi: usize) -> usize {
        ri * self.n_h() + hi
    }

    /// Visits every cell as `(flat index, r, h)`; `h` is `None` for spatial grids.
    pub fn cells(&self) -> impl Iterator<Item = (usize, f64, Option<f64>)> + '_ {
        let nh = self.n_h();
        (0..self.len()).map(move |k| {
            let r = self.r_values[k / nh];
            let h = self.h_values.as_ref().map(|h| h[k % nh]);
            (k, r, h)
        })
    }
}

/// Lag grid following the usual convention: r_max is a quarter of the window
/// diagonal and h_max a quarter of |T|, with the zero lag excluded.
pub fn make_lag_grid(window: &Window, n_r: usize, n_h: Option<usize>) -> Result<LagGrid> {
    if n_r < 2 {
        return Err(Error::InvalidGrid(format!("n_r must be at least 2, got {n_r}")));
    }
    let r = LagGrid::equally_spaced(0.25 * window.diagonal(), n_r);
    let h = match (window.t, n_h) {
        (Some(t), Some(nh)) => {
            if nh < 2 {
                return Err(Error::InvalidGrid(format!("n_h must be at least 2, got {nh}")));
            }
            Some(LagGrid::equally_spaced(0.25 * t.len(), nh))
        }
        (Some(_), None) => {
            return Err(Error::InvalidGrid(
                "spatio-temporal window needs a temporal lag count".into(),
            ))
        }
        (None, Some(_)) => {
            return Err(Error::InvalidGrid("spatial window cannot take temporal lags".into()))
        }
        (None, None) => None,
    };
    LagGrid::new(r, h)
}

/// Which of the four K estimators produced a [`KEstimate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KKind {
    Homogeneous,
    Inhomogeneous,
    LocalHomogeneous,
    LocalInhomogeneous,
    Theoretical,
}

/// K-function values on a lag grid, row-major over `(r, h)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KEstimate {
    pub grid: LagGrid,
    pub values: Vec<f64>,
    pub kind: KKind,
    pub point_index: Option<usize>,
}

impl KEstimate {
    pub fn at(&self, ri: usize, hi: usize) -> f64 {
        self.values[self.grid.index(ri, hi)]
    }

    /// True when values never decrease along either lag axis.
    pub fn is_monotone(&self) -> bool {
        let (nr, nh) = (self.grid.n_r(), self.grid.n_h());
        for ri in 0..nr {
            for hi in 0..nh {
                let v = self.at(ri, hi);
                if ri + 1 < nr && self.at(ri + 1, hi) < v {
                    return false;
                }
                if hi + 1 < nh && self.at(ri, hi + 1) < v {
                    return false;
                }
            }
        }
        true
    }
}
