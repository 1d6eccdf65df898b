//! Minimum-contrast estimation: the discrepancy between the intensity-weighted K-function
//! and its Poisson reference, optionally with a radial penalty around a first-stage fit.

mod hessian;
mod local;
mod optimize;

pub use hessian::{estimate_se, finite_difference_hessian, SeEstimate};
pub use local::{fit_local, fit_local_problem, local_objective, LocalFitOptions, LocalFitResult, LocalPenalty, PointFit};
pub use optimize::{minimize, MinimizeOptions, Minimum, RestartTrace};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kstat::{theoretical_k, KEstimator};
use crate::model::{make_lag_grid, LagGrid, LogLinearFamily, PointPattern};
use crate::simulate::stream_rng;

/// Weight function φ(r, h) on lags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LagWeight {
    Constant,
    /// φ(r) = r⁻²
    InverseSquare,
    /// One value per lag cell, row-major like the grid.
    Table(Vec<f64>),
}

impl LagWeight {
    fn values(&self, grid: &LagGrid) -> Result<Vec<f64>> {
        let v: Vec<f64> = match self {
            LagWeight::Constant => vec![1.0; grid.len()],
            LagWeight::InverseSquare => grid.cells().map(|(_, r, _)| 1.0 / (r * r)).collect(),
            LagWeight::Table(t) => {
                if t.len() != grid.len() {
                    return Err(Error::Config(format!(
                        "weight table has {} entries for {} lag cells",
                        t.len(),
                        grid.len()
                    )));
                }
                t.clone()
            }
        };
        if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::Config("lag weights must be non-negative and finite".into()));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    #[default]
    Trapezoid,
}

/// Composite trapezoid weights on possibly uneven nodes.
fn trapezoid_weights(x: &[f64]) -> Result<Vec<f64>> {
    if x.len() < 2 {
        return Err(Error::InvalidGrid("trapezoid rule needs at least two lags per axis".into()));
    }
    let m = x.len();
    Ok((0..m)
        .map(|k| {
            let left = if k > 0 { x[k] - x[k - 1] } else { 0.0 };
            let right = if k + 1 < m { x[k + 1] - x[k] } else { 0.0 };
            0.5 * (left + right)
        })
        .collect())
}

/// Lag grid, weight function and quadrature rule of the contrast integral.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastConfig {
    pub grid: LagGrid,
    pub phi: LagWeight,
    #[serde(default)]
    pub integrator: Integrator,
}

impl ContrastConfig {
    pub fn new(grid: LagGrid) -> Self {
        Self {
            grid,
            phi: LagWeight::Constant,
            integrator: Integrator::Trapezoid,
        }
    }

    /// 153 spatial lags, or 15 × 15 spatio-temporal lags, up to a quarter of the maximum distances.
    pub fn standard(pattern: &PointPattern) -> Result<Self> {
        let grid = if pattern.is_spatio_temporal() {
            make_lag_grid(pattern.window(), 15, Some(15))?
        } else {
            make_lag_grid(pattern.window(), 153, None)?
        };
        Ok(Self::new(grid))
    }

    pub fn with_phi(mut self, phi: LagWeight) -> Self {
        self.phi = phi;
        self
    }

    /// Quadrature weight times φ for every lag cell.
    pub fn cell_weights(&self) -> Result<Vec<f64>> {
        self.cell_weights_with(&self.phi)
    }

    pub fn cell_weights_with(&self, phi: &LagWeight) -> Result<Vec<f64>> {
        let wr = trapezoid_weights(self.grid.r_values())?;
        let wh = match self.grid.h_values() {
            Some(h) => trapezoid_weights(h)?,
            None => vec![1.0],
        };
        let phi = phi.values(&self.grid)?;
        Ok(self
            .grid
            .cells()
            .map(|(k, _, _)| {
                let nh = wh.len();
                wr[k / nh] * wh[k % nh] * phi[k]
            })
            .collect())
    }

    /// ∫∫ φ (K − πr²h)² dr dh for K values given on the grid.
    pub fn discrepancy(&self, k_values: &[f64]) -> Result<f64> {
        if k_values.len() != self.grid.len() {
            return Err(Error::Config(format!(
                "{} K values for {} lag cells",
                k_values.len(),
                self.grid.len()
            )));
        }
        let w = self.cell_weights()?;
        let reference = theoretical_k(&self.grid).values;
        Ok(squared_discrepancy(k_values, 1.0, &reference, &w))
    }
}

fn squared_discrepancy(raw: &[f64], scale: f64, reference: &[f64], weights: &[f64]) -> f64 {
    raw.iter()
        .zip(reference)
        .zip(weights)
        .map(|((k, t), w)| {
            let d = scale * k - t;
            w * d * d
        })
        .sum()
}

/// A pattern paired with a model family and contrast configuration, ready for repeated
/// objective evaluation.
#[derive(Debug, Clone)]
pub struct ContrastProblem {
    family: LogLinearFamily,
    config: ContrastConfig,
    estimator: KEstimator,
    design: Vec<f64>,
    reference: Vec<f64>,
    weights: Vec<f64>,
}

impl ContrastProblem {
    pub fn new(pattern: &PointPattern, family: &LogLinearFamily, config: &ContrastConfig) -> Result<Self> {
        let estimator = KEstimator::new(pattern, &config.grid)?;
        Ok(Self {
            family: family.clone(),
            config: config.clone(),
            design: family.design(pattern.points()),
            reference: theoretical_k(&config.grid).values,
            weights: config.cell_weights()?,
            estimator,
        })
    }

    pub fn family(&self) -> &LogLinearFamily {
        &self.family
    }

    pub fn config(&self) -> &ContrastConfig {
        &self.config
    }

    pub fn pattern(&self) -> &PointPattern {
        self.estimator.pattern()
    }

    pub fn estimator(&self) -> &KEstimator {
        &self.estimator
    }

    pub fn dim(&self) -> usize {
        self.family.dim()
    }

    pub fn initial_theta(&self) -> Vec<f64> {
        let p = self.pattern();
        self.family.initial_theta(p.len(), p.window().volume())
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() || theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "theta {theta:?} must be {} finite values",
                self.dim()
            )));
        }
        Ok(())
    }

    /// 1/λ(u_i; θ) for every point, or an evaluation error if any intensity is 0 or ∞.
    pub(crate) fn inverse_intensities(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let p = self.dim();
        let mut inv = Vec::with_capacity(self.design.len() / p);
        for row in self.design.chunks_exact(p) {
            let eta: f64 = row.iter().zip(theta).map(|(f, t)| f * t).sum();
            let (l, w) = (eta.exp(), (-eta).exp());
            if !(l.is_finite() && l > 0.0 && w.is_finite()) {
                return Err(Error::Evaluation { theta: theta.to_vec() });
            }
            inv.push(w);
        }
        Ok(inv)
    }

    pub(crate) fn design_row(&self, i: usize) -> &[f64] {
        let p = self.dim();
        &self.design[i * p..(i + 1) * p]
    }

    pub(crate) fn reference(&self) -> &[f64] {
        &self.reference
    }

    pub(crate) fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weighted K values K̂_I(r, h; λ(θ)) on the grid.
    pub fn weighted_k(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        let inv = self.inverse_intensities(theta)?;
        let mut out = vec![0.0; self.config.grid.len()];
        self.estimator.pairs().weighted_pair_sums(&inv, &mut out);
        let s = self.estimator.inhom_scale();
        out.iter_mut().for_each(|v| *v *= s);
        Ok(out)
    }

    /// M(θ)
    pub fn objective(&self, theta: &[f64]) -> Result<f64> {
        self.check_theta(theta)?;
        let inv = self.inverse_intensities(theta)?;
        let mut out = vec![0.0; self.config.grid.len()];
        self.estimator.pairs().weighted_pair_sums(&inv, &mut out);
        Ok(squared_discrepancy(
            &out,
            self.estimator.inhom_scale(),
            &self.reference,
            &self.weights,
        ))
    }

    /// M(θ) as a plain function for the optimizer; failures become +∞.
    pub fn objective_fn(&self) -> impl Fn(&[f64]) -> f64 + '_ {
        move |t: &[f64]| self.objective(t).unwrap_or(f64::INFINITY)
    }
}

/// M(θ) for a single parameter vector.
pub fn contrast_objective(
    pattern: &PointPattern,
    family: &LogLinearFamily,
    theta: &[f64],
    config: &ContrastConfig,
) -> Result<f64> {
    ContrastProblem::new(pattern, family, config)?.objective(theta)
}

/// Radial penalty τ(‖θ − θ̂‖₂ − R)².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    #[serde(rename = "R")]
    pub radius: f64,
    pub tau: f64,
    pub center: Vec<f64>,
}

impl PenaltyConfig {
    /// τ = 1/R².
    pub fn new(radius: f64, center: Vec<f64>) -> Result<Self> {
        Self::with_tau(radius, 1.0 / (radius * radius), center)
    }

    pub fn with_tau(radius: f64, tau: f64, center: Vec<f64>) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::Config(format!("penalty radius {radius} must be positive")));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Config(format!("penalty strength {tau} must be positive")));
        }
        if center.iter().any(|c| !c.is_finite()) {
            return Err(Error::Config("penalty center must be finite".into()));
        }
        Ok(Self { radius, tau, center })
    }
}

pub fn penalty_term(theta: &[f64], config: &PenaltyConfig) -> f64 {
    let dist = theta
        .iter()
        .zip(&config.center)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    config.tau * (dist - config.radius).powi(2)
}

/// Requested penalty before the first-stage estimate is known.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    #[serde(rename = "R")]
    pub radius: f64,
    /// Defaults to 1/R².
    #[serde(default)]
    pub tau: Option<f64>,
}

impl PenaltySpec {
    pub fn radius(radius: f64) -> Self {
        Self { radius, tau: None }
    }

    pub fn centered_at(&self, center: Vec<f64>) -> Result<PenaltyConfig> {
        match self.tau {
            Some(tau) => PenaltyConfig::with_tau(self.radius, tau, center),
            None => PenaltyConfig::new(self.radius, center),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub minimize: MinimizeOptions,
    pub seed: u64,
    pub compute_se: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            minimize: MinimizeOptions::default(),
            seed: 0,
            compute_se: true,
        }
    }
}

impl FitOptions {
    pub fn seeded(seed: u64) -> Self {
        Self {
            seed,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub param_names: Vec<String>,
    pub theta_hat: Vec<f64>,
    /// Value of the minimized objective (M, or M + penalty).
    #[serde(with = "crate::serde_nan")]
    pub objective: f64,
    /// M(θ) alone at `theta_hat`.
    #[serde(with = "crate::serde_nan")]
    pub contrast: f64,
    /// Curvature standard errors; `null` where the Hessian is flat.
    #[serde(with = "crate::serde_nan::vec")]
    pub std_errors: Vec<f64>,
    pub hessian_singular: bool,
    #[serde(with = "crate::serde_nan")]
    pub condition_number: f64,
    pub converged: bool,
    pub n_evals: usize,
    pub penalty: Option<PenaltyConfig>,
    pub seed: u64,
    pub restarts: Vec<RestartTrace>,
    /// Unpenalized first-stage fit, present for penalized results.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage_one: Option<Box<FitResult>>,
}

fn finish(
    names: &[String],
    min: Minimum,
    objective: &dyn Fn(&[f64]) -> f64,
    contrast: f64,
    penalty: Option<PenaltyConfig>,
    opts: &FitOptions,
) -> FitResult {
    let (std_errors, singular, cond) = if opts.compute_se {
        let se = estimate_se(objective, &min.theta);
        (se.std_errors, se.singular, se.condition_number)
    } else {
        (vec![f64::NAN; min.theta.len()], false, f64::NAN)
    };
    FitResult {
        param_names: names.to_vec(),
        theta_hat: min.theta,
        objective: min.value,
        contrast,
        std_errors,
        hessian_singular: singular,
        condition_number: cond,
        converged: min.converged,
        n_evals: min.n_evals,
        penalty,
        seed: opts.seed,
        restarts: min.restarts,
        stage_one: None,
    }
}

/// Minimizes M(θ) from the homogeneous method-of-moments start.
pub fn fit_unpenalized(problem: &ContrastProblem, opts: &FitOptions) -> Result<FitResult> {
    fit_unpenalized_from(problem, &problem.initial_theta(), opts)
}

pub fn fit_unpenalized_from(problem: &ContrastProblem, init: &[f64], opts: &FitOptions) -> Result<FitResult> {
    let f = problem.objective_fn();
    let min = minimize(&f, init, &opts.minimize, opts.seed)?;
    let contrast = min.value;
    Ok(finish(problem.family().names(), min, &f, contrast, None, opts))
}

/// Unit vector in a uniformly random direction.
pub fn random_direction(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream_rng(seed, 0x0064_6972);
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// θ̂ displaced by R in a random direction drawn from `seed`.
fn sphere_start(penalty: &PenaltyConfig, dim: usize, seed: u64) -> Vec<f64> {
    random_direction(dim, seed)
        .iter()
        .zip(&penalty.center)
        .map(|(d, c)| c + penalty.radius * d)
        .collect()
}

/// Minimizes M(θ) + τ(‖θ − θ̂‖ − R)², starting on the penalty sphere in a random direction.
pub fn fit_penalized(problem: &ContrastProblem, penalty: &PenaltyConfig, opts: &FitOptions) -> Result<FitResult> {
    if penalty.center.len() != problem.dim() {
        return Err(Error::Config(format!(
            "penalty center has {} entries, model has {} parameters",
            penalty.center.len(),
            problem.dim()
        )));
    }
    let start = sphere_start(penalty, problem.dim(), opts.seed);
    let m = problem.objective_fn();
    let total = |t: &[f64]| m(t) + penalty_term(t, penalty);
    let min = minimize(&total, &start, &opts.minimize, opts.seed ^ 0x5eed)?;
    let contrast = m(&min.theta);
    Ok(finish(
        problem.family().names(),
        min,
        &total,
        contrast,
        Some(penalty.clone()),
        opts,
    ))
}

/// Two-stage estimate: θ̂ = argmin M, then (if requested) θ* = argmin M + M_pen centred at θ̂.
pub fn fit_global(
    pattern: &PointPattern,
    family: &LogLinearFamily,
    config: &ContrastConfig,
    penalty: Option<PenaltySpec>,
    opts: &FitOptions,
) -> Result<FitResult> {
    let problem = ContrastProblem::new(pattern, family, config)?;
    fit_two_stage(&problem, penalty, opts)
}

pub fn fit_two_stage(problem: &ContrastProblem, penalty: Option<PenaltySpec>, opts: &FitOptions) -> Result<FitResult> {
    let stage_one = fit_unpenalized(problem, opts)?;
    match penalty {
        None => Ok(stage_one),
        Some(spec) => {
            let cfg = spec.centered_at(stage_one.theta_hat.clone())?;
            let mut out = fit_penalized(problem, &cfg, opts)?;
            out.stage_one = Some(Box::new(stage_one));
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kstat::theoretical_k;
    use crate::model::Window;
    use crate::simulate::simulate_homogeneous;

    #[test]
    fn exact_reference_has_zero_discrepancy() {
        let g = make_lag_grid(&Window::unit_cube(), 15, Some(15)).unwrap();
        let cfg = ContrastConfig::new(g.clone());
        assert_eq!(cfg.discrepancy(&theoretical_k(&g).values).unwrap(), 0.0);
    }

    #[test]
    fn zero_weight_annihilates() {
        let w = Window::unit_square();
        let p = simulate_homogeneous(100.0, &w, 1).unwrap();
        let g = make_lag_grid(&w, 30, None).unwrap();
        let cfg = ContrastConfig::new(g.clone()).with_phi(LagWeight::Table(vec![0.0; g.len()]));
        let fam = LogLinearFamily::intercept_slope_x();
        for theta in [[0.0, 0.0], [4.0, -3.0], [10.0, 10.0]] {
            assert_eq!(contrast_objective(&p, &fam, &theta, &cfg).unwrap(), 0.0);
        }
    }

    #[test]
    fn trapezoid_integrates_linear_exactly() {
        let x = [0.1, 0.2, 0.45, 0.5];
        let w = trapezoid_weights(&x).unwrap();
        let integral: f64 = x.iter().zip(&w).map(|(x, w)| x * w).sum();
        assert!((integral - (0.25 - 0.01) / 2.0).abs() < 1e-12);
        assert!(trapezoid_weights(&[0.3]).is_err());
    }

    #[test]
    fn discrepancy_of_constant_offset() {
        // (K - πr²)² ≡ 1 over [r0, rmax] integrates to rmax - r0
        let g = LagGrid::new(vec![0.1, 0.2, 0.3], None).unwrap();
        let cfg = ContrastConfig::new(g.clone());
        let k: Vec<f64> = theoretical_k(&g).values.iter().map(|v| v + 1.0).collect();
        assert!((cfg.discrepancy(&k).unwrap() - 0.2).abs() < 1e-12);
        let cfg = cfg.with_phi(LagWeight::InverseSquare);
        let expected = 0.05 / 0.01 + 0.1 / 0.04 + 0.05 / 0.09;
        assert!((cfg.discrepancy(&k).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn penalty_geometry() {
        for r in [0.25, 1.0, 2.5, 10.0] {
            let cfg = PenaltyConfig::new(r, vec![1.0, -2.0]).unwrap();
            assert!((penalty_term(&[1.0, -2.0], &cfg) - 1.0).abs() < 1e-15);
            let on_sphere = [1.0 + r * 0.6, -2.0 + r * 0.8];
            assert!(penalty_term(&on_sphere, &cfg).abs() < 1e-15);
        }
        let cfg = PenaltyConfig::with_tau(2.5, 0.16, vec![0.0, 0.0]).unwrap();
        assert!((penalty_term(&[3.0, 4.0], &cfg) - 1.0).abs() < 1e-12);
        assert!(PenaltyConfig::new(0.0, vec![0.0]).is_err());
    }

    #[test]
    fn random_direction_is_unit() {
        for s in 0..20 {
            let d = random_direction(3, s);
            assert!((d.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn weighted_k_matches_estimator() {
        let w = Window::unit_square();
        let p = simulate_homogeneous(120.0, &w, 6).unwrap();
        let cfg = ContrastConfig::new(make_lag_grid(&w, 40, None).unwrap());
        let fam = LogLinearFamily::intercept_slope_x();
        let prob = ContrastProblem::new(&p, &fam, &cfg).unwrap();
        let theta = [4.0, 0.5];
        let direct = crate::kstat::k_inhom(
            &p,
            &cfg.grid,
            &crate::kstat::WeightingIntensity::Model(fam.with_theta(theta.to_vec()).unwrap()),
        )
        .unwrap();
        let via = prob.weighted_k(&theta).unwrap();
        for (a, b) in via.iter().zip(&direct.values) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-300));
        }
        let m = prob.objective(&theta).unwrap();
        assert!((m - cfg.discrepancy(&direct.values).unwrap()).abs() <= 1e-12 * m);
        assert!(prob.objective(&[f64::NAN, 0.0]).is_err());
        assert!(matches!(prob.objective(&[1e6, 0.0]), Err(Error::Evaluation { .. })));
    }
}
