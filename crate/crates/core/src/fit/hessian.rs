//! Curvature-based standard errors from a finite-difference Hessian.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

/// Eigenvalues at or below this fraction of the largest one are treated as zero.
const SINGULAR_RATIO: f64 = 1e-10;
/// Loadings below this on a null direction do not make a component undefined.
const NULL_LOADING: f64 = 1e-6;

/// "Curvature s.e.": square roots of the diagonal of the inverse Hessian of the
/// objective. Not a calibrated sampling covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeEstimate {
    /// `NaN` marks a component that loads on a flat (or concave) direction.
    #[serde(with = "crate::serde_nan::vec")]
    pub std_errors: Vec<f64>,
    /// Row-major Hessian.
    #[serde(with = "crate::serde_nan::vec")]
    pub hessian: Vec<f64>,
    pub singular: bool,
    /// Largest over smallest eigenvalue; infinite when the smallest is not positive.
    #[serde(with = "crate::serde_nan")]
    pub condition_number: f64,
    pub diagnostic: Option<String>,
}

/// Central-difference Hessian with step `1e-4 (1 + |θ_j|)`.
pub fn finite_difference_hessian(f: &dyn Fn(&[f64]) -> f64, theta: &[f64]) -> Vec<f64> {
    let p = theta.len();
    let steps: Vec<f64> = theta.iter().map(|t| 1e-4 * (1.0 + t.abs())).collect();
    let f0 = f(theta);
    let mut h = vec![0.0; p * p];
    let shifted = |moves: &[(usize, f64)]| {
        let mut x = theta.to_vec();
        for &(j, d) in moves {
            x[j] += d;
        }
        f(&x)
    };
    for j in 0..p {
        let hj = steps[j];
        h[j * p + j] = (shifted(&[(j, hj)]) - 2.0 * f0 + shifted(&[(j, -hj)])) / (hj * hj);
        for k in (j + 1)..p {
            let hk = steps[k];
            let v = (shifted(&[(j, hj), (k, hk)]) - shifted(&[(j, hj), (k, -hk)]) - shifted(&[(j, -hj), (k, hk)])
                + shifted(&[(j, -hj), (k, -hk)]))
                / (4.0 * hj * hk);
            h[j * p + k] = v;
            h[k * p + j] = v;
        }
    }
    h
}

pub fn estimate_se(f: &dyn Fn(&[f64]) -> f64, theta_hat: &[f64]) -> SeEstimate {
    let p = theta_hat.len();
    let hessian = finite_difference_hessian(f, theta_hat);
    if hessian.iter().any(|v| !v.is_finite()) {
        return SeEstimate {
            std_errors: vec![f64::NAN; p],
            hessian,
            singular: true,
            condition_number: f64::INFINITY,
            diagnostic: Some("objective is not finite around the estimate".into()),
        };
    }
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(p, p, &hessian));
    let largest = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let smallest = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let null = |l: f64| largest == 0.0 || l <= SINGULAR_RATIO * largest;
    let mut std_errors = vec![0.0; p];
    let mut undefined = vec![false; p];
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        for j in 0..p {
            if null(l) {
                if v[j].abs() > NULL_LOADING {
                    undefined[j] = true;
                }
            } else {
                std_errors[j] += v[j] * v[j] / l;
            }
        }
    }
    for (se, u) in std_errors.iter_mut().zip(&undefined) {
        *se = if *u { f64::NAN } else { se.sqrt() };
    }
    let singular = eig.eigenvalues.iter().any(|&l| null(l));
    let condition_number = if smallest > 0.0 { largest / smallest } else { f64::INFINITY };
    let diagnostic = singular.then(|| {
        format!(
            "Hessian is singular or indefinite (eigenvalues {:?}); the parameters are not locally identifiable",
            eig.eigenvalues.as_slice()
        )
    });
    SeEstimate {
        std_errors,
        hessian,
        singular,
        condition_number,
        diagnostic,
    }
}
