//! Poisson point process simulation and the named simulation scenarios.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{integrate_intensity, IntensityModel, LogLinearFamily, Point, PointPattern, QuadratureResolution, Window};

/// Largest expected count we are willing to allocate for.
const MAX_EXPECTED_COUNT: f64 = 1e8;

/// Independent RNG stream `stream` under `seed`. Replicate `k` of a study uses stream `k`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn poisson_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> Result<usize> {
    if !(mean.is_finite() && mean > 0.0) {
        return Err(Error::Simulation(format!("expected count {mean} must be positive and finite")));
    }
    if mean > MAX_EXPECTED_COUNT {
        return Err(Error::Simulation(format!(
            "expected count {mean:.3e} exceeds the supported maximum {MAX_EXPECTED_COUNT:.0e}"
        )));
    }
    let d = Poisson::new(mean).map_err(|e| Error::Simulation(e.to_string()))?;
    Ok(d.sample(rng) as usize)
}

fn uniform_point<R: Rng + ?Sized>(window: &Window, rng: &mut R) -> Point {
    let x = window.x.lo + window.x.len() * rng.random::<f64>();
    let y = window.y.lo + window.y.len() * rng.random::<f64>();
    let t = window.t.map_or(0.0, |t| t.lo + t.len() * rng.random::<f64>());
    Point { x, y, t }
}

pub fn simulate_homogeneous_with<R: Rng + ?Sized>(lambda: f64, window: &Window, rng: &mut R) -> Result<PointPattern> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Simulation(format!("rate {lambda} must be positive")));
    }
    let n = poisson_count(lambda * window.volume(), rng)?;
    let points = (0..n).map(|_| uniform_point(window, rng)).collect();
    PointPattern::new(points, *window)
}

/// Homogeneous Poisson process with rate `lambda`: N ~ Poisson(λ|W||T|), uniform locations.
pub fn simulate_homogeneous(lambda: f64, window: &Window, seed: u64) -> Result<PointPattern> {
    simulate_homogeneous_with(lambda, window, &mut stream_rng(seed, 0))
}

pub fn simulate_inhomogeneous_with<R: Rng + ?Sized>(
    model: &IntensityModel,
    window: &Window,
    rng: &mut R,
) -> Result<PointPattern> {
    let lambda_max = model.upper_bound(window)?;
    let n = poisson_count(lambda_max * window.volume(), rng)?;
    let mut points = Vec::new();
    for _ in 0..n {
        let p = uniform_point(window, rng);
        let keep = model.log_intensity(&p).exp() / lambda_max;
        if rng.random::<f64>() < keep {
            points.push(p);
        }
    }
    PointPattern::new(points, *window)
}

/// Inhomogeneous Poisson process by Lewis–Shedler thinning of a dominating homogeneous process.
pub fn simulate_inhomogeneous(model: &IntensityModel, window: &Window, seed: u64) -> Result<PointPattern> {
    simulate_inhomogeneous_with(model, window, &mut stream_rng(seed, 0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioId {
    S1,
    S2,
    S3,
    ST1,
    ST2,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 5] = [ScenarioId::S1, ScenarioId::S2, ScenarioId::S3, ScenarioId::ST1, ScenarioId::ST2];

    pub fn is_spatio_temporal(self) -> bool {
        matches!(self, ScenarioId::ST1 | ScenarioId::ST2)
    }

    pub fn family(self) -> LogLinearFamily {
        match self {
            ScenarioId::S1 | ScenarioId::ST1 => LogLinearFamily::constant(),
            ScenarioId::S2 => LogLinearFamily::slope_x(),
            ScenarioId::S3 | ScenarioId::ST2 => LogLinearFamily::intercept_slope_x(),
        }
    }

    /// Parameter values of the published scenarios. The homogeneous ones use
    /// α = ln 500 so that the expected count is 500 on the unit square/cube.
    pub fn default_theta(self) -> Vec<f64> {
        match self {
            ScenarioId::S1 | ScenarioId::ST1 => vec![500f64.ln()],
            ScenarioId::S2 => vec![8.34],
            ScenarioId::S3 | ScenarioId::ST2 => vec![2.0, 6.0],
        }
    }

    pub fn window(self) -> Window {
        if self.is_spatio_temporal() {
            Window::unit_cube()
        } else {
            Window::unit_square()
        }
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ScenarioId::S1 => "S1",
            ScenarioId::S2 => "S2",
            ScenarioId::S3 => "S3",
            ScenarioId::ST1 => "ST1",
            ScenarioId::ST2 => "ST2",
        };
        f.write_str(s)
    }
}

impl FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "S1" => Ok(ScenarioId::S1),
            "S2" => Ok(ScenarioId::S2),
            "S3" => Ok(ScenarioId::S3),
            "ST1" => Ok(ScenarioId::ST1),
            "ST2" => Ok(ScenarioId::ST2),
            other => Err(Error::Config(format!("unknown scenario '{other}' (expected S1, S2, S3, ST1 or ST2)"))),
        }
    }
}

/// A simulation scenario: window, generating model and its expected count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: ScenarioId,
    pub window: Window,
    pub model: IntensityModel,
    pub expected_n: f64,
}

impl ScenarioSpec {
    pub fn new(id: ScenarioId, theta: Vec<f64>) -> Result<Self> {
        let window = id.window();
        let model = id.family().with_theta(theta)?;
        let expected_n = integrate_intensity(&model, &window, &QuadratureResolution::cubic(256))?;
        Ok(Self {
            id,
            window,
            model,
            expected_n,
        })
    }

    pub fn standard(id: ScenarioId) -> Self {
        Self::new(id, id.default_theta()).expect("default scenario parameters are valid")
    }

    pub fn true_theta(&self) -> &[f64] {
        self.model.theta()
    }
}

pub fn scenario_pattern_with<R: Rng + ?Sized>(spec: &ScenarioSpec, rng: &mut R) -> Result<PointPattern> {
    match spec.id {
        ScenarioId::S1 | ScenarioId::ST1 => {
            let rate = spec.model.eval(&Point::spatial(0.0, 0.0))?;
            simulate_homogeneous_with(rate, &spec.window, rng)
        }
        _ => simulate_inhomogeneous_with(&spec.model, &spec.window, rng),
    }
}

pub fn scenario_pattern(spec: &ScenarioSpec, seed: u64) -> Result<PointPattern> {
    scenario_pattern_with(spec, &mut stream_rng(seed, 0))
}

/// Draws a fresh 64-bit seed from `rng`, for handing to a downstream stochastic step.
pub fn child_seed<R: RngCore + ?Sized>(rng: &mut R) -> u64 {
    rng.next_u64()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(f: impl Fn(u64) -> PointPattern, reps: u64) -> Vec<f64> {
        (0..reps).map(|k| f(k).len() as f64).collect()
    }

    fn mean_var(v: &[f64]) -> (f64, f64) {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        (m, var)
    }

    #[test]
    fn homogeneous_counts() {
        let w = Window::unit_square();
        let c = counts(|k| simulate_homogeneous(500.0, &w, k).unwrap(), 1000);
        let (m, v) = mean_var(&c);
        assert!((478.0..=522.0).contains(&m), "{m}");
        assert!((v - 500.0).abs() < 75.0, "{v}");
    }

    #[test]
    fn same_seed_same_pattern() {
        let w = Window::unit_cube();
        assert_eq!(
            simulate_homogeneous(50.0, &w, 9).unwrap(),
            simulate_homogeneous(50.0, &w, 9).unwrap()
        );
        let spec = ScenarioSpec::standard(ScenarioId::S3);
        assert_eq!(scenario_pattern(&spec, 4).unwrap(), scenario_pattern(&spec, 4).unwrap());
        assert_ne!(scenario_pattern(&spec, 4).unwrap(), scenario_pattern(&spec, 5).unwrap());
    }

    #[test]
    fn inhomogeneous_counts() {
        let w = Window::unit_square();
        let m = LogLinearFamily::intercept_slope_x().with_theta(vec![2.0, 6.0]).unwrap();
        let c = counts(|k| simulate_inhomogeneous(&m, &w, k).unwrap(), 1000);
        let (mean, _) = mean_var(&c);
        assert!((466.0..=526.0).contains(&mean), "{mean}");

        let m = LogLinearFamily::slope_x().with_theta(vec![8.34]).unwrap();
        let c = counts(|k| simulate_inhomogeneous(&m, &w, k).unwrap(), 1000);
        let (mean, _) = mean_var(&c);
        assert!((472.0..=532.0).contains(&mean), "{mean}");
    }

    #[test]
    fn constant_thinning_matches_homogeneous() {
        let w = Window::unit_square();
        let m = IntensityModel::constant(500.0).unwrap();
        let c = counts(|k| simulate_inhomogeneous(&m, &w, 1000 + k).unwrap(), 500);
        let (mean, _) = mean_var(&c);
        // 3 sigma band of a mean of 500 Poisson(500) draws
        assert!((mean - 500.0).abs() < 3.0 * (500.0f64 / 500.0).sqrt(), "{mean}");
    }

    #[test]
    fn scenario_expected_counts() {
        for id in ScenarioId::ALL {
            let s = ScenarioSpec::standard(id);
            assert!((s.expected_n - 500.0).abs() / 500.0 < 0.02, "{id}: {}", s.expected_n);
        }
        let s = ScenarioSpec::standard(ScenarioId::ST2);
        assert!((s.expected_n - 495.7).abs() / 495.7 < 1e-3);
        let p = scenario_pattern(&s, 3).unwrap();
        assert!(p.is_spatio_temporal());
        assert!("st9".parse::<ScenarioId>().is_err());
        assert_eq!("st2".parse::<ScenarioId>().unwrap(), ScenarioId::ST2);
    }

    #[test]
    fn absurd_rates_are_errors() {
        let w = Window::unit_square();
        assert!(simulate_homogeneous(1e12, &w, 1).is_err());
        assert!(simulate_homogeneous(-1.0, &w, 1).is_err());
        let m = LogLinearFamily::slope_x().with_theta(vec![800.0]).unwrap();
        assert!(simulate_inhomogeneous(&m, &w, 1).is_err());
    }
}
