//! Nelder–Mead simplex search with jittered restarts.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulate::stream_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MinimizeOptions {
    /// Number of simplex runs; the first starts at the initial point, the rest are jittered.
    pub restarts: usize,
    /// Stop when every vertex is within this (max-norm) distance of the best one.
    pub tol_x: f64,
    /// Stop when the spread of objective values across the simplex falls below this.
    pub tol_f: f64,
    /// Evaluation budget per run.
    pub max_evals: usize,
    /// Initial simplex edge, relative to `max(|θ_j|, 1)`.
    pub initial_step: f64,
    /// Standard deviation of restart jitter, relative to `max(|θ_j|, 1)`.
    pub jitter: f64,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self {
            restarts: 5,
            tol_x: 1e-6,
            tol_f: 1e-9,
            max_evals: 2000,
            initial_step: 0.1,
            jitter: 0.5,
        }
    }
}

/// One simplex run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartTrace {
    pub start: Vec<f64>,
    pub theta: Vec<f64>,
    #[serde(with = "crate::serde_nan")]
    pub value: f64,
    pub n_evals: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Minimum {
    pub theta: Vec<f64>,
    pub value: f64,
    pub converged: bool,
    /// Evaluations summed over all runs.
    pub n_evals: usize,
    pub restarts: Vec<RestartTrace>,
}

fn clean(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

fn nelder_mead(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], opts: &MinimizeOptions) -> RestartTrace {
    const ALPHA: f64 = 1.0;
    const GAMMA: f64 = 2.0;
    const RHO: f64 = 0.5;
    const SIGMA: f64 = 0.5;

    let n = x0.len();
    let mut evals = 0usize;
    let eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        clean(f(x))
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let f0 = eval(x0, &mut evals);
    simplex.push((x0.to_vec(), f0));
    for j in 0..n {
        let mut x = x0.to_vec();
        x[j] += opts.initial_step * x0[j].abs().max(1.0);
        let fx = eval(&x, &mut evals);
        simplex.push((x, fx));
    }

    let mut converged = false;
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, worst) = (simplex[0].1, simplex[n].1);
        let spread = if best.is_finite() && worst.is_finite() {
            worst - best
        } else {
            f64::INFINITY
        };
        let diameter = simplex[1..]
            .iter()
            .map(|(x, _)| {
                x.iter()
                    .zip(&simplex[0].0)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if best.is_finite() && (spread < opts.tol_f || diameter < opts.tol_x) {
            converged = true;
            break;
        }
        if evals >= opts.max_evals {
            break;
        }

        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            centroid.iter_mut().zip(x).for_each(|(c, v)| *c += v / n as f64);
        }
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };
        let xr = along(ALPHA);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = along(GAMMA);
            let fe = eval(&xe, &mut evals);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < simplex[n].1 {
            let xc = along(RHO);
            let fc = eval(&xc, &mut evals);
            (xc, fc.min(f64::INFINITY))
        } else {
            let xc = along(-RHO);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        };
        if fc < simplex[n].1.min(fr) {
            simplex[n] = (xc, fc);
            continue;
        }
        let x_best = simplex[0].0.clone();
        for (x, fx) in simplex.iter_mut().skip(1) {
            for (v, b) in x.iter_mut().zip(&x_best) {
                *v = b + SIGMA * (*v - b);
            }
            *fx = eval(x, &mut evals);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (theta, value) = simplex.swap_remove(0);
    RestartTrace {
        start: x0.to_vec(),
        theta,
        value,
        n_evals: evals,
        converged,
    }
}

/// Minimizes `f` from `init`. Run 0 starts at `init`; later runs start at `init` plus
/// Gaussian jitter drawn from `seed`. Returns the best run. Non-finite objective values
/// count as +∞.
pub fn minimize(f: &dyn Fn(&[f64]) -> f64, init: &[f64], opts: &MinimizeOptions, seed: u64) -> Result<Minimum> {
    if init.is_empty() {
        return Err(Error::Optimization("no parameters to optimize".into()));
    }
    if !clean(f(init)).is_finite() {
        return Err(Error::Optimization(format!("objective is not finite at the start {init:?}")));
    }
    let mut rng = stream_rng(seed, 0x6e6d);
    let mut runs = Vec::with_capacity(opts.restarts.max(1));
    for k in 0..opts.restarts.max(1) {
        let start: Vec<f64> = if k == 0 {
            init.to_vec()
        } else {
            init.iter()
                .map(|&v| {
                    let z: f64 = rng.sample(StandardNormal);
                    v + opts.jitter * v.abs().max(1.0) * z
                })
                .collect()
        };
        if !clean(f(&start)).is_finite() {
            continue;
        }
        runs.push(nelder_mead(f, &start, opts));
    }
    let best = runs
        .iter()
        .filter(|r| r.value.is_finite())
        .min_by(|a, b| a.value.total_cmp(&b.value))
        .cloned()
        .ok_or_else(|| Error::Optimization("no restart produced a finite objective".into()))?;
    Ok(Minimum {
        theta: best.theta.clone(),
        value: best.value,
        converged: best.converged,
        n_evals: runs.iter().map(|r| r.n_evals).sum::<usize>() + opts.restarts.max(1),
        restarts: runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn convex_quadratic() {
        let f = |t: &[f64]| (t[0] - 2.0).powi(2) + (t[1] - 6.0).powi(2);
        let m = minimize(&f, &[0.0, 0.0], &MinimizeOptions::default(), 1).unwrap();
        assert!((m.theta[0] - 2.0).abs() < 1e-4 && (m.theta[1] - 6.0).abs() < 1e-4, "{:?}", m.theta);
        assert!(m.converged);
    }

    #[test]
    fn flat_valley_lands_on_the_line() {
        let f = |t: &[f64]| (t[0] + t[1] - 8.0).powi(2);
        let m = minimize(&f, &[0.0, 0.0], &MinimizeOptions::default(), 2).unwrap();
        assert!((m.theta[0] + m.theta[1] - 8.0).abs() < 1e-3, "{:?}", m.theta);
    }

    #[test]
    fn one_dimensional() {
        let f = |t: &[f64]| (t[0] - 8.34).powi(2) + 1.0;
        let m = minimize(&f, &[0.0], &MinimizeOptions::default(), 3).unwrap();
        assert!((m.theta[0] - 8.34).abs() < 1e-3);
        assert!((m.value - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rosenbrock() {
        let f = |t: &[f64]| (1.0 - t[0]).powi(2) + 100.0 * (t[1] - t[0] * t[0]).powi(2);
        let opts = MinimizeOptions {
            tol_f: 1e-14,
            tol_x: 1e-9,
            max_evals: 5000,
            ..Default::default()
        };
        let m = minimize(&f, &[-1.2, 1.0], &opts, 4).unwrap();
        assert!((m.theta[0] - 1.0).abs() < 1e-3 && (m.theta[1] - 1.0).abs() < 1e-3, "{:?}", m.theta);
    }

    #[test]
    fn non_finite_start_is_an_error() {
        let f = |_: &[f64]| f64::NAN;
        assert!(minimize(&f, &[0.0], &MinimizeOptions::default(), 0).is_err());
    }

    #[test]
    fn nan_regions_are_avoided() {
        let f = |t: &[f64]| if t[0] < 0.5 { f64::NAN } else { (t[0] - 1.0).powi(2) };
        let m = minimize(&f, &[2.0], &MinimizeOptions::default(), 5).unwrap();
        assert!((m.theta[0] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn best_restart_is_returned_and_deterministic() {
        let f = |t: &[f64]| (t[0] * t[0] - 4.0).powi(2) + 0.1 * (t[0] - 2.0).powi(2);
        let a = minimize(&f, &[-2.5], &MinimizeOptions::default(), 9).unwrap();
        let b = minimize(&f, &[-2.5], &MinimizeOptions::default(), 9).unwrap();
        assert_eq!(a, b);
        let best = a.restarts.iter().map(|r| r.value).fold(f64::INFINITY, f64::min);
        assert_eq!(a.value, best);
    }
}
