//! Per-point fits on the local weighted K-functions.

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{finish, minimize, penalty_term, squared_discrepancy, ContrastConfig, ContrastProblem};
use super::{FitOptions, FitResult, LagWeight, PenaltyConfig};
use crate::error::{Error, Result};
use crate::model::{LogLinearFamily, PointPattern};
use crate::simulate::stream_rng;

/// Smallest share of points that must fit for a local fit to succeed.
const MIN_SUCCESS_SHARE: f64 = 0.9;
const POINT_STREAM_BASE: u64 = 0x10ca_0000_0000;

impl ContrastProblem {
    fn point_inverse_intensity(&self, theta: &[f64], j: usize) -> Result<f64> {
        let eta: f64 = self.design_row(j).iter().zip(theta).map(|(f, t)| f * t).sum();
        let w = (-eta).exp();
        if !(w.is_finite() && w > 0.0 && eta.exp().is_finite()) {
            return Err(Error::Evaluation { theta: theta.to_vec() });
        }
        Ok(w)
    }

    /// Local weighted K values K̂_I^i(r, h; λ(θ)) around point `i`.
    pub fn local_weighted_k(&self, theta: &[f64], i: usize) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        let n = self.pattern().len();
        if i >= n {
            return Err(Error::IndexOutOfRange { index: i, n });
        }
        let pairs = self.estimator().pairs();
        let mut out = vec![0.0; self.config().grid.len()];
        for &(j, c) in pairs.neighbors_of(i) {
            out[c as usize] += self.point_inverse_intensity(theta, j as usize)?;
        }
        pairs.accumulate_cells(&mut out);
        let scale = self.estimator().local_inhom_scale() * self.point_inverse_intensity(theta, i)?;
        out.iter_mut().for_each(|v| *v *= scale);
        Ok(out)
    }

    /// M_local(θ) at point `i` with the problem's own lag weights.
    pub fn local_objective(&self, theta: &[f64], i: usize) -> Result<f64> {
        self.local_objective_weighted(theta, i, self.weights())
    }

    /// M_local(θ) at point `i` with per-cell weights (quadrature × φ_i) supplied by the caller.
    pub fn local_objective_weighted(&self, theta: &[f64], i: usize, weights: &[f64]) -> Result<f64> {
        if weights.len() != self.config().grid.len() {
            return Err(Error::Config(format!(
                "{} lag weights for {} lag cells",
                weights.len(),
                self.config().grid.len()
            )));
        }
        let k = self.local_weighted_k(theta, i)?;
        Ok(squared_discrepancy(&k, 1.0, self.reference(), weights))
    }
}

/// M_local(θ) for point `i`; `phi_i` replaces the configured φ for this point.
pub fn local_objective(
    pattern: &PointPattern,
    family: &LogLinearFamily,
    theta: &[f64],
    i: usize,
    config: &ContrastConfig,
    phi_i: Option<&LagWeight>,
) -> Result<f64> {
    let problem = ContrastProblem::new(pattern, family, config)?;
    let weights = config.cell_weights_with(phi_i.unwrap_or(&config.phi))?;
    problem.local_objective_weighted(theta, i, &weights)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LocalPenalty {
    #[default]
    None,
    /// One radius for every point.
    Fixed(f64),
    /// Radius R_i for point i.
    PerPoint(Vec<f64>),
}

impl LocalPenalty {
    fn radius(&self, i: usize) -> Option<f64> {
        match self {
            LocalPenalty::None => None,
            LocalPenalty::Fixed(r) => Some(*r),
            LocalPenalty::PerPoint(r) => Some(r[i]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct LocalFitOptions {
    pub fit: FitOptions,
    pub penalty: LocalPenalty,
    /// φ_i per point; the configured φ when absent.
    pub point_phi: Option<Vec<LagWeight>>,
}

/// Outcome for one point: a fit, or the reason it failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointFit {
    pub index: usize,
    pub fit: Option<FitResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalFitResult {
    /// Aligned with the pattern's point indices.
    pub points: Vec<PointFit>,
    pub n_failed: usize,
    pub penalty: LocalPenalty,
    pub seed: u64,
}

impl LocalFitResult {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Estimates of successful points, in index order.
    pub fn estimates(&self) -> impl Iterator<Item = &[f64]> {
        self.points.iter().filter_map(|p| p.fit.as_ref().map(|f| f.theta_hat.as_slice()))
    }

    /// Column `j` of the successful estimates.
    pub fn parameter(&self, j: usize) -> Vec<f64> {
        self.estimates().map(|t| t[j]).collect()
    }
}

fn point_seed(seed: u64, i: usize) -> u64 {
    stream_rng(seed, POINT_STREAM_BASE + i as u64).next_u64()
}

fn fit_point(problem: &ContrastProblem, i: usize, weights: &[f64], radius: Option<f64>, opts: &FitOptions) -> Result<FitResult> {
    let f = |t: &[f64]| problem.local_objective_weighted(t, i, weights).unwrap_or(f64::INFINITY);
    let min = minimize(&f, &problem.initial_theta(), &opts.minimize, opts.seed)?;
    let value = min.value;
    let stage_one = finish(problem.family().names(), min, &f, value, None, opts);
    let Some(radius) = radius else {
        return Ok(stage_one);
    };
    let cfg = PenaltyConfig::new(radius, stage_one.theta_hat.clone())?;
    let total = |t: &[f64]| f(t) + penalty_term(t, &cfg);
    let mut out = fit_penalized_with(problem, &f, &total, &cfg, opts)?;
    out.stage_one = Some(Box::new(stage_one));
    Ok(out)
}

fn fit_penalized_with(
    problem: &ContrastProblem,
    contrast: &dyn Fn(&[f64]) -> f64,
    total: &dyn Fn(&[f64]) -> f64,
    cfg: &PenaltyConfig,
    opts: &FitOptions,
) -> Result<FitResult> {
    let start = super::sphere_start(cfg, problem.dim(), opts.seed);
    let min = minimize(total, &start, &opts.minimize, opts.seed ^ 0x5eed)?;
    let value = contrast(&min.theta);
    Ok(finish(problem.family().names(), min, total, value, Some(cfg.clone()), opts))
}

/// Independent per-point fits, run in parallel. Fails only when fewer than 90% of the
/// points produce an estimate.
pub fn fit_local(
    pattern: &PointPattern,
    family: &LogLinearFamily,
    config: &ContrastConfig,
    opts: &LocalFitOptions,
) -> Result<LocalFitResult> {
    let problem = ContrastProblem::new(pattern, family, config)?;
    fit_local_problem(&problem, opts)
}

pub fn fit_local_problem(problem: &ContrastProblem, opts: &LocalFitOptions) -> Result<LocalFitResult> {
    let n = problem.pattern().len();
    if let LocalPenalty::PerPoint(r) = &opts.penalty {
        if r.len() != n {
            return Err(Error::Config(format!("{} radii for {n} points", r.len())));
        }
    }
    let weights: Vec<Vec<f64>> = match &opts.point_phi {
        Some(phi) if phi.len() != n => {
            return Err(Error::Config(format!("{} local weight functions for {n} points", phi.len())));
        }
        Some(phi) => phi
            .iter()
            .map(|p| problem.config().cell_weights_with(p))
            .collect::<Result<_>>()?,
        None => vec![problem.weights().to_vec()],
    };
    let points: Vec<PointFit> = (0..n)
        .into_par_iter()
        .map(|i| {
            let w = if weights.len() == 1 { &weights[0] } else { &weights[i] };
            let point_opts = FitOptions {
                seed: point_seed(opts.fit.seed, i),
                ..opts.fit.clone()
            };
            match fit_point(problem, i, w, opts.penalty.radius(i), &point_opts) {
                Ok(fit) => PointFit {
                    index: i,
                    fit: Some(fit),
                    error: None,
                },
                Err(e) => PointFit {
                    index: i,
                    fit: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let n_failed = points.iter().filter(|p| p.fit.is_none()).count();
    if ((n - n_failed) as f64) < MIN_SUCCESS_SHARE * n as f64 {
        let first = points.iter().find_map(|p| p.error.clone()).unwrap_or_default();
        return Err(Error::Optimization(format!(
            "local fit failed at {n_failed} of {n} points (first error: {first})"
        )));
    }
    Ok(LocalFitResult {
        points,
        n_failed,
        penalty: opts.penalty.clone(),
        seed: opts.fit.seed,
    })
}
