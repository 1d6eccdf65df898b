//! Smoothed raw residual fields, kernel bandwidth selection and selection of the penalty radius.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit_penalized, ContrastConfig, ContrastProblem, FitOptions, FitResult, PenaltySpec};
use crate::model::{IntensityModel, LogLinearFamily, Point, PointPattern, Window};

/// Kernel mass at the nearest node below which a point counts as a numerical spike.
const SPIKE_MASS: f64 = 1e-12;

pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..n).map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp()).collect()
        }
    }
}

/// 40 log-spaced radii in [0.25, 10].
pub fn default_r_grid() -> Vec<f64> {
    log_spaced(0.25, 10.0, 40)
}

/// 20 log-spaced radii in [0.25, 10].
pub fn oracle_r_grid() -> Vec<f64> {
    log_spaced(0.25, 10.0, 20)
}

fn gaussian(d: f64, sigma: f64) -> f64 {
    (-0.5 * (d / sigma).powi(2)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + libm::erf(z / std::f64::consts::SQRT_2))
}

/// Rectangular grid of cell centres over the spatial window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalGrid {
    pub nx: usize,
    pub ny: usize,
}

impl Default for EvalGrid {
    fn default() -> Self {
        Self { nx: 128, ny: 128 }
    }
}

impl EvalGrid {
    fn centers(&self, window: &Window) -> (Vec<f64>, Vec<f64>) {
        let axis = |lo: f64, len: f64, m: usize| (0..m).map(|k| lo + len * (k as f64 + 0.5) / m as f64).collect();
        (
            axis(window.x.lo, window.x.len(), self.nx),
            axis(window.y.lo, window.y.len(), self.ny),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResidualOptions {
    pub grid: EvalGrid,
    pub edge_correction: bool,
    /// Nodes of the midpoint rule used to integrate a fitted intensity over time.
    pub time_nodes: usize,
}

impl Default for ResidualOptions {
    fn default() -> Self {
        Self {
            grid: EvalGrid::default(),
            edge_correction: true,
            time_nodes: 64,
        }
    }
}

/// The fitted intensity whose smoothed version is compared with the data.
#[derive(Debug, Clone)]
pub enum FittedIntensity {
    Model(IntensityModel),
    /// Weighted point masses, smoothed exactly like data points.
    Atoms(Vec<(Point, f64)>),
}

impl From<IntensityModel> for FittedIntensity {
    fn from(m: IntensityModel) -> Self {
        FittedIntensity::Model(m)
    }
}

/// s(u) = λ̃(u) − λ†(u) on a grid of cell centres, stored row by row (`y` outer).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualField {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub values: Vec<f64>,
    pub data_smooth: Vec<f64>,
    pub model_smooth: Vec<f64>,
    pub bandwidth: f64,
    pub edge_correction: bool,
    pub warnings: Vec<String>,
}

impl ResidualField {
    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.x.len() + ix]
    }

    fn cell_area(&self) -> f64 {
        let dx = if self.x.len() > 1 { self.x[1] - self.x[0] } else { 1.0 };
        let dy = if self.y.len() > 1 { self.y[1] - self.y[0] } else { 1.0 };
        dx * dy
    }

    /// ∫_W s(u) du
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_area()
    }

    /// ∫_W |s(u)| du
    pub fn abs_integral(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum::<f64>() * self.cell_area()
    }

    pub fn data_mass(&self) -> f64 {
        self.data_smooth.iter().sum::<f64>() * self.cell_area()
    }

    pub fn model_mass(&self) -> f64 {
        self.model_smooth.iter().sum::<f64>() * self.cell_area()
    }
}

/// Kernel values of each source coordinate at each node, one row per source.
fn kernel_rows(sources: &[f64], nodes: &[f64], sigma: f64) -> Vec<Vec<f64>> {
    sources
        .iter()
        .map(|s| nodes.iter().map(|u| gaussian(u - s, sigma)).collect())
        .collect()
}

/// 1 / ∫ κ over the interval, per node, for one axis.
fn edge_factors(nodes: &[f64], lo: f64, hi: f64, sigma: f64, enabled: bool) -> Vec<f64> {
    nodes
        .iter()
        .map(|u| {
            if enabled {
                1.0 / (normal_cdf((hi - u) / sigma) - normal_cdf((lo - u) / sigma))
            } else {
                1.0
            }
        })
        .collect()
}

struct Smoother {
    x: Vec<f64>,
    y: Vec<f64>,
    ex: Vec<f64>,
    ey: Vec<f64>,
    sigma: f64,
}

impl Smoother {
    fn new(window: &Window, sigma: f64, opts: &ResidualOptions) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Diagnostics(format!("bandwidth {sigma} must be positive")));
        }
        if opts.grid.nx < 2 || opts.grid.ny < 2 {
            return Err(Error::Diagnostics("evaluation grid needs at least 2 × 2 nodes".into()));
        }
        let (x, y) = opts.grid.centers(window);
        Ok(Self {
            ex: edge_factors(&x, window.x.lo, window.x.hi, sigma, opts.edge_correction),
            ey: edge_factors(&y, window.y.lo, window.y.hi, sigma, opts.edge_correction),
            x,
            y,
            sigma,
        })
    }

    /// e(u) Σ_k w_k κ(u − p_k)
    fn atoms(&self, points: &[(f64, f64, f64)]) -> Vec<f64> {
        let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
        let gx = kernel_rows(&xs, &self.x, self.sigma);
        let gy = kernel_rows(&ys, &self.y, self.sigma);
        let nx = self.x.len();
        let mut out = vec![0.0; nx * self.y.len()];
        out.par_chunks_mut(nx).enumerate().for_each(|(iy, row)| {
            for (k, p) in points.iter().enumerate() {
                let wy = p.2 * gy[k][iy];
                if wy == 0.0 {
                    continue;
                }
                row.iter_mut().zip(&gx[k]).for_each(|(r, g)| *r += wy * g);
            }
            row.iter_mut()
                .zip(&self.ex)
                .for_each(|(r, e)| *r *= e * self.ey[iy]);
        });
        out
    }

    /// e(u) ∫_W κ(u − v) f(v) dv by the midpoint rule on the same grid; `f` row by row.
    fn surface(&self, f: &[f64]) -> Vec<f64> {
        let (nx, ny) = (self.x.len(), self.y.len());
        let cell = (self.x[1] - self.x[0]) * (self.y[1] - self.y[0]);
        let kx = kernel_rows(&self.x, &self.x, self.sigma);
        let ky = kernel_rows(&self.y, &self.y, self.sigma);
        let mut along_x = vec![0.0; nx * ny];
        along_x.par_chunks_mut(nx).enumerate().for_each(|(jy, row)| {
            let src = &f[jy * nx..(jy + 1) * nx];
            for (ix, r) in row.iter_mut().enumerate() {
                *r = src.iter().zip(&kx[ix]).map(|(v, k)| v * k).sum();
            }
        });
        let mut out = vec![0.0; nx * ny];
        out.par_chunks_mut(nx).enumerate().for_each(|(iy, row)| {
            for (jy, k) in ky[iy].iter().enumerate() {
                let src = &along_x[jy * nx..(jy + 1) * nx];
                row.iter_mut().zip(src).for_each(|(r, v)| *r += k * v);
            }
            for (ix, r) in row.iter_mut().enumerate() {
                *r *= cell * self.ex[ix] * self.ey[iy];
            }
        });
        out
    }

    fn spike_warning(&self, pattern: &PointPattern) -> Option<String> {
        let (dx, dy) = (self.x[1] - self.x[0], self.y[1] - self.y[0]);
        let nearest = |v: f64, nodes: &[f64]| nodes.iter().map(|u| (u - v).abs()).fold(f64::INFINITY, f64::min);
        let spikes = pattern
            .points()
            .iter()
            .filter(|p| {
                let mass = gaussian(nearest(p.x, &self.x), self.sigma) * gaussian(nearest(p.y, &self.y), self.sigma) * dx * dy;
                mass < SPIKE_MASS
            })
            .count();
        (spikes > 0).then(|| {
            format!(
                "bandwidth {} is too small for the evaluation grid: {spikes} points leave no kernel mass on any node",
                self.sigma
            )
        })
    }
}

/// Fitted intensity on the grid, integrated over time for spatio-temporal models.
fn model_on_grid(model: &IntensityModel, window: &Window, x: &[f64], y: &[f64], time_nodes: usize) -> Result<Vec<f64>> {
    let times: Vec<(f64, f64)> = match window.t {
        Some(t) => {
            let m = time_nodes.max(1);
            (0..m)
                .map(|k| (t.lo + t.len() * (k as f64 + 0.5) / m as f64, t.len() / m as f64))
                .collect()
        }
        None => vec![(0.0, 1.0)],
    };
    let mut out = Vec::with_capacity(x.len() * y.len());
    for &yv in y {
        for &xv in x {
            let mut acc = 0.0;
            for &(t, w) in &times {
                acc += w * model.eval(&Point::new(xv, yv, t))?;
            }
            out.push(acc);
        }
    }
    Ok(out)
}

fn smooth_with(
    smoother: &Smoother,
    pattern: &PointPattern,
    data: &[f64],
    fitted: &FittedIntensity,
    opts: &ResidualOptions,
) -> Result<ResidualField> {
    let model_smooth = match fitted {
        FittedIntensity::Model(m) => {
            let f = model_on_grid(m, pattern.window(), &smoother.x, &smoother.y, opts.time_nodes)?;
            smoother.surface(&f)
        }
        FittedIntensity::Atoms(a) => smoother.atoms(&a.iter().map(|(p, w)| (p.x, p.y, *w)).collect::<Vec<_>>()),
    };
    let values: Vec<f64> = data.iter().zip(&model_smooth).map(|(a, b)| a - b).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diagnostics("residual field is not finite".into()));
    }
    Ok(ResidualField {
        x: smoother.x.clone(),
        y: smoother.y.clone(),
        values,
        data_smooth: data.to_vec(),
        model_smooth,
        bandwidth: smoother.sigma,
        edge_correction: opts.edge_correction,
        warnings: smoother.spike_warning(pattern).into_iter().collect(),
    })
}

fn data_atoms(pattern: &PointPattern) -> Vec<(f64, f64, f64)> {
    pattern.points().iter().map(|p| (p.x, p.y, 1.0)).collect()
}

/// Smoothed raw residuals with a Gaussian kernel of standard deviation `bandwidth`.
/// Spatio-temporal patterns are projected onto space and the fitted intensity integrated over time.
pub fn smooth_residual_field(
    pattern: &PointPattern,
    fitted: &FittedIntensity,
    bandwidth: f64,
    opts: &ResidualOptions,
) -> Result<ResidualField> {
    pattern.require(1)?;
    let smoother = Smoother::new(pattern.window(), bandwidth, opts)?;
    let data = smoother.atoms(&data_atoms(pattern));
    smooth_with(&smoother, pattern, &data, fitted, opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BandwidthRule {
    #[default]
    NormalScale,
    CvMse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Bandwidth {
    Spatial(f64),
    SpatioTemporal { space: f64, time: f64 },
}

impl Bandwidth {
    pub fn spatial(&self) -> f64 {
        match self {
            Bandwidth::Spatial(s) => *s,
            Bandwidth::SpatioTemporal { space, .. } => *space,
        }
    }

    pub fn temporal(&self) -> Option<f64> {
        match self {
            Bandwidth::Spatial(_) => None,
            Bandwidth::SpatioTemporal { time, .. } => Some(*time),
        }
    }
}

fn std_dev(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = v.clone().count() as f64;
    let mean = v.clone().sum::<f64>() / n;
    (v.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn spatial_sd(pattern: &PointPattern) -> Result<f64> {
    let sx = std_dev(pattern.points().iter().map(|p| p.x));
    let sy = std_dev(pattern.points().iter().map(|p| p.y));
    if !(sx > 0.0 && sy > 0.0) {
        return Err(Error::Diagnostics("coordinates have zero variance".into()));
    }
    Ok(((sx * sx + sy * sy) / 2.0).sqrt())
}

/// Least-squares cross-validation score of the Gaussian kernel intensity estimate.
pub fn cv_score(pattern: &PointPattern, sigma: f64) -> f64 {
    let pts = pattern.points();
    let n = pts.len() as f64;
    let k2 = |d2: f64, s: f64| (-0.5 * d2 / (s * s)).exp() / (2.0 * std::f64::consts::PI * s * s);
    let wide = std::f64::consts::SQRT_2 * sigma;
    let pair_sum: f64 = (0..pts.len())
        .into_par_iter()
        .map(|i| {
            let mut acc = 0.0;
            for q in &pts[i + 1..] {
                let d2 = (pts[i].x - q.x).powi(2) + (pts[i].y - q.y).powi(2);
                acc += k2(d2, wide) - 2.0 * k2(d2, sigma);
            }
            acc
        })
        .sum();
    n / (4.0 * std::f64::consts::PI * sigma * sigma) + 2.0 * pair_sum
}

/// Candidate spatial bandwidths for cross-validation: 20 log-spaced values between
/// 1/200 and 1/4 of the window diagonal.
pub fn cv_bandwidth_grid(window: &Window) -> Vec<f64> {
    let d = (window.x.len().powi(2) + window.y.len().powi(2)).sqrt();
    log_spaced(d / 200.0, d / 4.0, 20)
}

/// Normal-scale rule: `σ n^(-1/6)` in space (σ pooled over x and y), `1.06 σ_t n^(-1/5)` in time.
/// Cross-validation replaces the spatial value by the minimizer of [`cv_score`].
pub fn select_bandwidth(pattern: &PointPattern, rule: BandwidthRule) -> Result<Bandwidth> {
    pattern.require(2)?;
    let n = pattern.len() as f64;
    let space = match rule {
        BandwidthRule::NormalScale => spatial_sd(pattern)? * n.powf(-1.0 / 6.0),
        BandwidthRule::CvMse => {
            spatial_sd(pattern)?;
            let grid = cv_bandwidth_grid(pattern.window());
            let scores: Vec<f64> = grid.iter().map(|s| cv_score(pattern, *s)).collect();
            argmin(&scores).map(|k| grid[k]).ok_or_else(|| Error::Diagnostics("cross-validation failed".into()))?
        }
    };
    if !pattern.is_spatio_temporal() {
        return Ok(Bandwidth::Spatial(space));
    }
    let st = std_dev(pattern.points().iter().map(|p| p.t));
    if st.is_nan() || st <= 0.0 {
        return Err(Error::Diagnostics("times have zero variance".into()));
    }
    Ok(Bandwidth::SpatioTemporal {
        space,
        time: 1.06 * st * n.powf(-0.2),
    })
}

/// First index of the smallest finite value.
fn argmin(v: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (k, x) in v.iter().enumerate() {
        if x.is_finite() && best.is_none_or(|b| *x < v[b]) {
            best = Some(k);
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RRule {
    Residual,
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedR {
    #[serde(rename = "R")]
    pub radius: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RSelection {
    pub rule: RRule,
    /// Radii that produced a criterion value, increasing.
    pub r_grid: Vec<f64>,
    pub criterion_values: Vec<f64>,
    /// θ̂_R aligned with `r_grid`.
    pub estimates: Vec<Vec<f64>>,
    pub chosen_r: f64,
    pub chosen_index: usize,
    pub excluded: Vec<ExcludedR>,
}

impl RSelection {
    pub fn chosen_theta(&self) -> &[f64] {
        &self.estimates[self.chosen_index]
    }

    fn build(rule: RRule, mut rows: Vec<(f64, f64, Vec<f64>)>, excluded: Vec<ExcludedR>) -> Result<Self> {
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        let criterion_values: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let chosen_index = argmin(&criterion_values).ok_or_else(|| {
            Error::Diagnostics(format!(
                "no radius produced a usable criterion ({} excluded)",
                excluded.len()
            ))
        })?;
        Ok(Self {
            rule,
            chosen_r: rows[chosen_index].0,
            r_grid: rows.iter().map(|r| r.0).collect(),
            criterion_values,
            estimates: rows.into_iter().map(|r| r.2).collect(),
            chosen_index,
            excluded,
        })
    }
}

fn check_r_grid(r_grid: &[f64]) -> Result<()> {
    if r_grid.is_empty() || r_grid.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(Error::Config("radius grid must be non-empty and positive".into()));
    }
    Ok(())
}

/// Σ_j (θ_j − θ̂_{j,R})² / |θ̂_{j,R}|. The absolute value keeps the criterion a
/// discrepancy when an estimate is negative; for positive estimates it is the plain ratio.
pub fn oracle_criterion(truth: &[f64], estimate: &[f64]) -> Option<f64> {
    if estimate.contains(&0.0) || truth.len() != estimate.len() {
        return None;
    }
    Some(truth.iter().zip(estimate).map(|(t, e)| (t - e).powi(2) / e.abs()).sum())
}

/// Chooses R by distance of θ̂_R from the known truth. Radii with a zero estimate are excluded.
pub fn select_r_oracle(true_theta: &[f64], fits: &[(f64, Vec<f64>)]) -> Result<RSelection> {
    check_r_grid(&fits.iter().map(|f| f.0).collect::<Vec<_>>())?;
    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    for (r, est) in fits {
        match oracle_criterion(true_theta, est) {
            Some(c) => rows.push((*r, c, est.clone())),
            None => excluded.push(ExcludedR {
                radius: *r,
                reason: format!("estimate {est:?} has a zero component or wrong length"),
            }),
        }
    }
    RSelection::build(RRule::Oracle, rows, excluded)
}

/// One penalized fit centred at `center` per radius, run in parallel.
pub fn penalized_path(
    problem: &ContrastProblem,
    center: &[f64],
    r_grid: &[f64],
    opts: &FitOptions,
) -> Vec<(f64, Result<FitResult>)> {
    r_grid
        .par_iter()
        .map(|&r| {
            let fit = PenaltySpec::radius(r)
                .centered_at(center.to_vec())
                .and_then(|cfg| fit_penalized(problem, &cfg, opts));
            (r, fit)
        })
        .collect()
}

/// Oracle choice of R over the penalized path around `center`, with the fit at the chosen radius.
pub fn select_r_oracle_at(
    problem: &ContrastProblem,
    center: &[f64],
    true_theta: &[f64],
    r_grid: &[f64],
    opts: &FitOptions,
) -> Result<(RSelection, FitResult)> {
    check_r_grid(r_grid)?;
    let mut fits = Vec::new();
    let mut failed = Vec::new();
    for (r, fit) in penalized_path(problem, center, r_grid, opts) {
        match fit {
            Ok(f) => fits.push((r, f)),
            Err(e) => failed.push(ExcludedR {
                radius: r,
                reason: e.to_string(),
            }),
        }
    }
    let candidates: Vec<(f64, Vec<f64>)> = fits.iter().map(|(r, f)| (*r, f.theta_hat.clone())).collect();
    let mut sel = if candidates.is_empty() {
        RSelection::build(RRule::Oracle, Vec::new(), Vec::new())?
    } else {
        select_r_oracle(true_theta, &candidates)?
    };
    sel.excluded.extend(failed);
    let fit = fits
        .into_iter()
        .find(|(r, _)| *r == sel.chosen_r)
        .map(|(_, f)| f)
        .ok_or_else(|| Error::Diagnostics("chosen radius has no fit".into()))?;
    Ok((sel, fit))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ResidualCriterion {
    /// |∫ s(u) du|
    #[default]
    Absolute,
    /// ∫ s(u) du
    Signed,
    /// ∫ |s(u)| du
    IntegratedAbsolute,
}

impl ResidualCriterion {
    pub fn evaluate(&self, field: &ResidualField) -> f64 {
        match self {
            ResidualCriterion::Absolute => field.integral().abs(),
            ResidualCriterion::Signed => field.integral(),
            ResidualCriterion::IntegratedAbsolute => field.abs_integral(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResidualSelectOptions {
    pub criterion: ResidualCriterion,
    /// Spatial bandwidth; the normal-scale rule when absent.
    pub bandwidth: Option<f64>,
    pub residual: ResidualOptions,
    pub fit: FitOptions,
}

impl Default for ResidualSelectOptions {
    fn default() -> Self {
        Self {
            criterion: ResidualCriterion::default(),
            bandwidth: None,
            residual: ResidualOptions::default(),
            fit: FitOptions {
                compute_se: false,
                ..FitOptions::default()
            },
        }
    }
}

/// Residual-based choice of R given the unpenalized estimate `center`: one penalized fit per
/// radius, scored by the smoothed residuals of its fitted intensity.
pub fn select_r_residual_at(
    problem: &ContrastProblem,
    center: &[f64],
    r_grid: &[f64],
    opts: &ResidualSelectOptions,
) -> Result<RSelection> {
    let (sel, _) = residual_selection(problem, center, r_grid, opts)?;
    Ok(sel)
}

/// As [`select_r_residual_at`], also returning the full fit at the chosen radius.
pub fn residual_selection(
    problem: &ContrastProblem,
    center: &[f64],
    r_grid: &[f64],
    opts: &ResidualSelectOptions,
) -> Result<(RSelection, Option<FitResult>)> {
    check_r_grid(r_grid)?;
    let pattern = problem.pattern();
    let sigma = match opts.bandwidth {
        Some(b) => b,
        None => select_bandwidth(pattern, BandwidthRule::NormalScale)?.spatial(),
    };
    let smoother = Smoother::new(pattern.window(), sigma, &opts.residual)?;
    let data = smoother.atoms(&data_atoms(pattern));
    let outcomes: Vec<(f64, Result<(f64, FitResult)>)> = r_grid
        .par_iter()
        .map(|&r| {
            let run = || -> Result<(f64, FitResult)> {
                let cfg = PenaltySpec::radius(r).centered_at(center.to_vec())?;
                let fit = fit_penalized(problem, &cfg, &opts.fit)?;
                let model = problem.family().with_theta(fit.theta_hat.clone())?;
                let field = smooth_with(&smoother, pattern, &data, &FittedIntensity::Model(model), &opts.residual)?;
                Ok((opts.criterion.evaluate(&field), fit))
            };
            (r, run())
        })
        .collect();
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    let mut excluded = Vec::new();
    for (r, out) in outcomes {
        match out {
            Ok((c, fit)) => {
                rows.push((r, c, fit.theta_hat.clone()));
                fits.push((r, fit));
            }
            Err(e) => excluded.push(ExcludedR {
                radius: r,
                reason: e.to_string(),
            }),
        }
    }
    let sel = RSelection::build(RRule::Residual, rows, excluded)?;
    let chosen = fits.into_iter().find(|(r, _)| *r == sel.chosen_r).map(|(_, f)| f);
    Ok((sel, chosen))
}

/// Residual-based choice of R: fits the unpenalized model first, then scans `r_grid`.
pub fn select_r_residual(
    pattern: &PointPattern,
    family: &LogLinearFamily,
    config: &ContrastConfig,
    r_grid: &[f64],
    opts: &ResidualSelectOptions,
) -> Result<RSelection> {
    let problem = ContrastProblem::new(pattern, family, config)?;
    let stage_one = crate::fit::fit_unpenalized(&problem, &opts.fit)?;
    select_r_residual_at(&problem, &stage_one.theta_hat, r_grid, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::make_lag_grid;
    use crate::simulate::{scenario_pattern, simulate_homogeneous, ScenarioId, ScenarioSpec};

    #[test]
    fn atoms_at_data_give_zero_residual() {
        let p = simulate_homogeneous(200.0, &Window::unit_square(), 3).unwrap();
        let atoms = FittedIntensity::Atoms(p.points().iter().map(|q| (*q, 1.0)).collect());
        let f = smooth_residual_field(&p, &atoms, 0.05, &ResidualOptions::default()).unwrap();
        assert!(f.values.iter().all(|v| v.abs() < 1e-9));
        assert!(f.warnings.is_empty());
    }

    #[test]
    fn masses_match_for_constant_model() {
        let p = simulate_homogeneous(300.0, &Window::unit_square(), 4).unwrap();
        let m = IntensityModel::constant(300.0).unwrap();
        let f = smooth_residual_field(&p, &m.into(), 0.08, &ResidualOptions::default()).unwrap();
        assert!((f.model_mass() - 300.0).abs() / 300.0 < 0.01, "{}", f.model_mass());
        assert!((f.data_mass() - p.len() as f64).abs() / (p.len() as f64) < 0.05, "{}", f.data_mass());
    }

    #[test]
    fn model_mass_close_to_integral_for_smooth_model() {
        let p = simulate_homogeneous(100.0, &Window::unit_square(), 5).unwrap();
        let m = LogLinearFamily::intercept_slope_x().with_theta(vec![4.0, 2.0]).unwrap();
        let exact = (4f64).exp() * (2f64.exp() - 1.0) / 2.0;
        let f = smooth_residual_field(&p, &m.into(), 0.03, &ResidualOptions::default()).unwrap();
        assert!((f.model_mass() - exact).abs() / exact < 0.01, "{} vs {exact}", f.model_mass());
    }

    #[test]
    fn misspecified_trend_shows_in_residual_signs() {
        let spec = ScenarioSpec::standard(ScenarioId::S3);
        let p = scenario_pattern(&spec, 11).unwrap();
        let flat = IntensityModel::constant(p.average_intensity()).unwrap();
        let f = smooth_residual_field(&p, &flat.into(), 0.1, &ResidualOptions::default()).unwrap();
        let nx = f.x.len();
        let mean_col = |ix: usize| (0..f.y.len()).map(|iy| f.at(ix, iy)).sum::<f64>() / f.y.len() as f64;
        assert!(mean_col(nx - 1) > 0.0 && mean_col(nx * 3 / 4) > 0.0);
        assert!(mean_col(0) < 0.0 && mean_col(nx / 4) < 0.0);
    }

    #[test]
    fn tiny_bandwidth_warns() {
        let p = simulate_homogeneous(50.0, &Window::unit_square(), 6).unwrap();
        let m = IntensityModel::constant(50.0).unwrap();
        let opts = ResidualOptions {
            grid: EvalGrid { nx: 16, ny: 16 },
            ..Default::default()
        };
        let f = smooth_residual_field(&p, &m.into(), 1e-4, &opts).unwrap();
        assert!(!f.warnings.is_empty());
        assert!(smooth_residual_field(&p, &IntensityModel::constant(50.0).unwrap().into(), 0.0, &opts).is_err());
    }

    #[test]
    fn spatio_temporal_model_is_integrated_over_time() {
        let w = Window::unit_cube();
        let p = simulate_homogeneous(200.0, &w, 8).unwrap();
        let m = IntensityModel::constant(200.0).unwrap();
        let f = smooth_residual_field(&p, &m.into(), 0.1, &ResidualOptions::default()).unwrap();
        assert!((f.model_mass() - 200.0).abs() < 2.0);
    }

    #[test]
    fn normal_scale_bandwidth() {
        let p = simulate_homogeneous(500.0, &Window::unit_square(), 9).unwrap();
        let Bandwidth::Spatial(h) = select_bandwidth(&p, BandwidthRule::NormalScale).unwrap() else {
            panic!("spatial pattern")
        };
        assert!((0.03..0.12).contains(&h), "{h}");
        let st = simulate_homogeneous(500.0, &Window::unit_cube(), 9).unwrap();
        let b = select_bandwidth(&st, BandwidthRule::NormalScale).unwrap();
        assert!(b.temporal().is_some());
    }

    #[test]
    fn normal_scale_is_scale_equivariant() {
        let p = simulate_homogeneous(200.0, &Window::unit_square(), 10).unwrap();
        let c = 3.5;
        let big = Window::spatial(
            crate::model::Interval::new(0.0, c).unwrap(),
            crate::model::Interval::new(0.0, c).unwrap(),
        );
        let scaled = PointPattern::new(
            p.points().iter().map(|q| Point::spatial(q.x * c, q.y * c)).collect(),
            big,
        )
        .unwrap();
        let a = select_bandwidth(&p, BandwidthRule::NormalScale).unwrap().spatial();
        let b = select_bandwidth(&scaled, BandwidthRule::NormalScale).unwrap().spatial();
        assert!((b - c * a).abs() < 1e-12);
    }

    #[test]
    fn degenerate_coordinates_are_errors() {
        let w = Window::unit_square();
        let p = PointPattern::new(vec![Point::spatial(0.5, 0.1), Point::spatial(0.5, 0.7)], w).unwrap();
        assert!(select_bandwidth(&p, BandwidthRule::NormalScale).is_err());
    }

    #[test]
    fn cv_prefers_smaller_bandwidth_for_clusters() {
        let w = Window::unit_square();
        let uniform = simulate_homogeneous(200.0, &w, 12).unwrap();
        let n = uniform.len();
        let centres = [(0.2, 0.3), (0.7, 0.8), (0.75, 0.25), (0.3, 0.75)];
        let clustered: Vec<Point> = uniform
            .points()
            .iter()
            .enumerate()
            .map(|(k, q)| {
                let c = centres[k % centres.len()];
                Point::spatial(c.0 + 0.04 * (q.x - 0.5), c.1 + 0.04 * (q.y - 0.5))
            })
            .collect();
        let clustered = PointPattern::new(clustered, w).unwrap();
        assert_eq!(clustered.len(), n);
        let a = select_bandwidth(&clustered, BandwidthRule::CvMse).unwrap().spatial();
        let b = select_bandwidth(&uniform, BandwidthRule::CvMse).unwrap().spatial();
        assert!(a < b, "{a} vs {b}");
    }

    #[test]
    fn oracle_examples() {
        let fits = vec![(1.0, vec![3.0, 5.0]), (2.0, vec![2.1, 5.9])];
        let sel = select_r_oracle(&[2.0, 6.0], &fits).unwrap();
        assert_eq!(sel.criterion_values[0], 1.0 / 3.0 + 1.0 / 5.0);
        assert!((sel.criterion_values[0] - (1.0 / 3.0 + 0.2)).abs() < 1e-12);
        assert!((sel.criterion_values[1] - (0.01 / 2.1 + 0.01 / 5.9)).abs() < 1e-12);
        assert_eq!(sel.chosen_r, 2.0);
        let exact = select_r_oracle(&[2.0, 6.0], &[(0.5, vec![2.5, 6.0]), (3.0, vec![2.0, 6.0])]).unwrap();
        assert_eq!(exact.criterion_values[1], 0.0);
        assert_eq!(exact.chosen_r, 3.0);
    }

    #[test]
    fn oracle_excludes_zero_estimates_and_breaks_ties_low() {
        let fits = vec![(4.0, vec![2.0, 6.0]), (0.5, vec![2.0, 6.0]), (1.0, vec![0.0, 6.0])];
        let sel = select_r_oracle(&[2.0, 6.0], &fits).unwrap();
        assert_eq!(sel.excluded.len(), 1);
        assert_eq!(sel.r_grid, vec![0.5, 4.0]);
        assert_eq!(sel.chosen_r, 0.5);
        assert!(select_r_oracle(&[2.0], &[(1.0, vec![0.0])]).is_err());
    }

    #[test]
    fn oracle_is_permutation_invariant_and_non_negative() {
        let fits = vec![(0.5, vec![2.4, 5.1]), (1.0, vec![1.7, 6.6]), (2.0, vec![3.0, -1.0])];
        let swapped: Vec<(f64, Vec<f64>)> = fits.iter().map(|(r, t)| (*r, vec![t[1], t[0]])).collect();
        let a = select_r_oracle(&[2.0, 6.0], &fits).unwrap();
        let b = select_r_oracle(&[6.0, 2.0], &swapped).unwrap();
        assert_eq!(a.criterion_values, b.criterion_values);
        assert_eq!(a.chosen_r, 1.0);
        assert!((a.criterion_values[2] - (1.0 / 3.0 + 49.0)).abs() < 1e-12);
    }

    #[test]
    fn flat_criterion_picks_smallest_radius() {
        let rows: Vec<(f64, f64, Vec<f64>)> = [3.0, 0.25, 1.0].iter().map(|r| (*r, 0.0, vec![2.0, 6.0])).collect();
        let sel = RSelection::build(RRule::Residual, rows, Vec::new()).unwrap();
        assert_eq!(sel.chosen_r, 0.25);
    }

    #[test]
    fn residual_selection_trace() {
        let spec = ScenarioSpec::standard(ScenarioId::S2);
        let p = scenario_pattern(&spec, 2).unwrap();
        let cfg = ContrastConfig::new(make_lag_grid(p.window(), 30, None).unwrap());
        let grid = log_spaced(0.25, 10.0, 5);
        let opts = ResidualSelectOptions {
            residual: ResidualOptions {
                grid: EvalGrid { nx: 32, ny: 32 },
                ..Default::default()
            },
            ..Default::default()
        };
        let sel = select_r_residual(&p, &spec.model.family().clone(), &cfg, &grid, &opts).unwrap();
        assert_eq!(sel.r_grid.len() + sel.excluded.len(), grid.len());
        assert_eq!(sel.criterion_values.len(), sel.r_grid.len());
        let best = sel.criterion_values.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(sel.criterion_values[sel.chosen_index], best);
        assert!(grid.contains(&sel.chosen_r));
    }

    #[test]
    fn log_spacing() {
        let g = default_r_grid();
        assert_eq!(g.len(), 40);
        assert!((g[0] - 0.25).abs() < 1e-12 && (g[39] - 10.0).abs() < 1e-9);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }
}
