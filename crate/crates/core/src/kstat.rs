//! Global and local K-function estimators, homogeneous and intensity-weighted.
//!
//! All estimators sum the indicator `I(‖u_i − u_j‖ ≤ r, |t_i − t_j| ≤ h)` over point pairs
//! without edge correction. Global estimators sum over unordered pairs (`j > i`), local
//! ones over every other point. Normalizations:
//!
//! | estimator      | factor applied to the (weighted) pair count          |
//! |----------------|------------------------------------------------------|
//! | homogeneous    | `C · V / (n (n − 1))`                                |
//! | inhomogeneous  | `C / V`, pair weight `1 / (λ̂_i λ̂_j)`                 |
//! | local homog.   | `C · (n / 2) / (λ̂² V)`, `λ̂ = n / V`                  |
//! | local inhomog. | `C · (n / 2) / V`, weight `1 / (λ̂_i λ̂_v)`            |
//!
//! with `V = |W||T|` (`|T| = 1` for spatial patterns) and `C` one of
//! [`SPATIAL_NORMALIZATION`] or [`SPATIO_TEMPORAL_NORMALIZATION`]. The `n / 2` factor makes
//! the average of the local inhomogeneous estimates over all points equal the global one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{IntensityModel, KEstimate, KKind, LagGrid, PointPattern};

/// Calibration constant for spatial estimators on the unit square with the default lag
/// grid (r_max = diagonal / 4). Obtained from a 20000-replicate Monte Carlo run (see
/// `examples/calibrate.rs`) as the factor that centres the relative deviation of the mean
/// weighted K from πr² over the middle half of a 153-lag grid. It absorbs the unordered-pair
/// factor 1/2 and the average uncorrected edge loss.
pub const SPATIAL_NORMALIZATION: f64 = 2.334;

/// Calibration constant for spatio-temporal estimators on the unit cube with a 15 × 15
/// default lag grid, fixed the same way against πr²h over the middle half of both axes.
pub const SPATIO_TEMPORAL_NORMALIZATION: f64 = 1.259;

pub fn normalization(spatio_temporal: bool) -> f64 {
    if spatio_temporal {
        SPATIO_TEMPORAL_NORMALIZATION
    } else {
        SPATIAL_NORMALIZATION
    }
}

/// Intensity used to weight point pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightingIntensity {
    Model(IntensityModel),
    Values(Vec<f64>),
}

impl WeightingIntensity {
    /// Per-point intensity values, validated positive and finite.
    pub fn resolve(&self, pattern: &PointPattern) -> Result<Vec<f64>> {
        let values = match self {
            WeightingIntensity::Model(m) => pattern.points().iter().map(|p| m.log_intensity(p).exp()).collect(),
            WeightingIntensity::Values(v) => {
                if v.len() != pattern.len() {
                    return Err(Error::Config(format!(
                        "{} weights supplied for {} points",
                        v.len(),
                        pattern.len()
                    )));
                }
                v.clone()
            }
        };
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::InvalidWeight { index, value });
        }
        Ok(values)
    }

    pub fn describe(&self) -> String {
        match self {
            WeightingIntensity::Model(m) => format!("model {:?} theta {:?}", m.family().names(), m.theta()),
            WeightingIntensity::Values(v) => format!("{} per-point values", v.len()),
        }
    }
}

/// Close pairs of a pattern binned by the first lag cell containing them.
///
/// All O(n²) distance work happens in [`PairIndex::new`]; a spatial index could replace it
/// without touching the estimators.
#[derive(Debug, Clone)]
pub struct PairIndex {
    n: usize,
    grid: LagGrid,
    pairs: Vec<(u32, u32, u32)>,
    offsets: Vec<usize>,
    neighbors: Vec<(u32, u32)>,
}

fn first_at_least(values: &[f64], d: f64) -> usize {
    values.partition_point(|&v| v < d)
}

impl PairIndex {
    pub fn new(pattern: &PointPattern, grid: &LagGrid) -> Result<Self> {
        if pattern.is_spatio_temporal() != grid.is_spatio_temporal() {
            return Err(Error::InvalidGrid(
                "lag grid and pattern disagree on the presence of a time axis".into(),
            ));
        }
        let pts = pattern.points();
        let n = pts.len();
        let r = grid.r_values();
        let h = grid.h_values();
        let (r_max, h_max) = (grid.r_max(), grid.h_max().unwrap_or(f64::INFINITY));
        let mut pairs = Vec::new();
        let mut degree = vec![0usize; n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = pts[i].spatial_distance(&pts[j]);
                if d > r_max {
                    continue;
                }
                let hi = match h {
                    Some(h) => {
                        let dt = (pts[i].t - pts[j].t).abs();
                        if dt > h_max {
                            continue;
                        }
                        first_at_least(h, dt)
                    }
                    None => 0,
                };
                let cell = grid.index(first_at_least(r, d), hi);
                pairs.push((i as u32, j as u32, cell as u32));
                degree[i] += 1;
                degree[j] += 1;
            }
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut fill = offsets.clone();
        let mut neighbors = vec![(0u32, 0u32); pairs.len() * 2];
        for &(i, j, c) in &pairs {
            neighbors[fill[i as usize]] = (j, c);
            fill[i as usize] += 1;
            neighbors[fill[j as usize]] = (i, c);
            fill[j as usize] += 1;
        }
        Ok(Self {
            n,
            grid: grid.clone(),
            pairs,
            offsets,
            neighbors,
        })
    }

    pub fn grid(&self) -> &LagGrid {
        &self.grid
    }

    pub fn n_points(&self) -> usize {
        self.n
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    /// Turns per-cell sums into sums over all cells with r' ≤ r and h' ≤ h.
    fn accumulate(&self, cells: &mut [f64]) {
        let (nr, nh) = (self.grid.n_r(), self.grid.n_h());
        for ri in 0..nr {
            for hi in 0..nh {
                let k = ri * nh + hi;
                if ri > 0 {
                    cells[k] += cells[k - nh];
                }
            }
        }
        if nh > 1 {
            for ri in 0..nr {
                for hi in 1..nh {
                    let k = ri * nh + hi;
                    cells[k] += cells[k - 1];
                }
            }
        }
    }

    /// Σ_{i<j} I(·) g_i g_j on every lag cell, writing into `out`.
    pub fn weighted_pair_sums(&self, g: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for &(i, j, c) in &self.pairs {
            out[c as usize] += g[i as usize] * g[j as usize];
        }
        self.accumulate(out);
    }

    /// Σ_{v ≠ i} I(·) g_v around point `i` (the factor g_i is not applied).
    pub fn weighted_neighbor_sums(&self, i: usize, g: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for &(j, c) in &self.neighbors[self.offsets[i]..self.offsets[i + 1]] {
            out[c as usize] += g[j as usize];
        }
        self.accumulate(out);
    }

    /// Indices and lag cells of the points close to `i`.
    pub fn neighbors_of(&self, i: usize) -> &[(u32, u32)] {
        &self.neighbors[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn accumulate_cells(&self, cells: &mut [f64]) {
        self.accumulate(cells)
    }
}

/// K estimators over one pattern and lag grid, sharing a [`PairIndex`].
#[derive(Debug, Clone)]
pub struct KEstimator {
    pairs: PairIndex,
    volume: f64,
    constant: f64,
    pattern: PointPattern,
}

impl KEstimator {
    pub fn new(pattern: &PointPattern, grid: &LagGrid) -> Result<Self> {
        pattern.require(2)?;
        Ok(Self {
            pairs: PairIndex::new(pattern, grid)?,
            volume: pattern.window().volume(),
            constant: normalization(pattern.is_spatio_temporal()),
            pattern: pattern.clone(),
        })
    }

    pub fn pairs(&self) -> &PairIndex {
        &self.pairs
    }

    pub fn pattern(&self) -> &PointPattern {
        &self.pattern
    }

    pub fn grid(&self) -> &LagGrid {
        self.pairs.grid()
    }

    fn n(&self) -> f64 {
        self.pattern.len() as f64
    }

    /// Factor turning Σ_{i<j} I/(λ_i λ_j) into the inhomogeneous estimate.
    pub fn inhom_scale(&self) -> f64 {
        self.constant / self.volume
    }

    /// Factor turning (1/λ_i) Σ_v I/λ_v into the local inhomogeneous estimate.
    pub fn local_inhom_scale(&self) -> f64 {
        self.constant * 0.5 * self.n() / self.volume
    }

    fn estimate(&self, values: Vec<f64>, kind: KKind, point_index: Option<usize>) -> KEstimate {
        KEstimate {
            grid: self.grid().clone(),
            values,
            kind,
            point_index,
        }
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.pattern.len() {
            return Err(Error::IndexOutOfRange {
                index: i,
                n: self.pattern.len(),
            });
        }
        Ok(())
    }

    pub fn homogeneous(&self) -> KEstimate {
        let ones = vec![1.0; self.pattern.len()];
        let mut out = vec![0.0; self.grid().len()];
        self.pairs.weighted_pair_sums(&ones, &mut out);
        let n = self.n();
        let scale = self.constant * self.volume / (n * (n - 1.0));
        out.iter_mut().for_each(|v| *v *= scale);
        self.estimate(out, KKind::Homogeneous, None)
    }

    pub fn inhomogeneous(&self, weights: &WeightingIntensity) -> Result<KEstimate> {
        let lambda = weights.resolve(&self.pattern)?;
        let inv: Vec<f64> = lambda.iter().map(|l| 1.0 / l).collect();
        let mut out = vec![0.0; self.grid().len()];
        self.pairs.weighted_pair_sums(&inv, &mut out);
        let scale = self.inhom_scale();
        out.iter_mut().for_each(|v| *v *= scale);
        Ok(self.estimate(out, KKind::Inhomogeneous, None))
    }

    pub fn local_homogeneous(&self, i: usize) -> Result<KEstimate> {
        self.check_index(i)?;
        let ones = vec![1.0; self.pattern.len()];
        let mut out = vec![0.0; self.grid().len()];
        self.pairs.weighted_neighbor_sums(i, &ones, &mut out);
        let rate = self.n() / self.volume;
        let scale = self.constant * 0.5 * self.n() / (rate * rate * self.volume);
        out.iter_mut().for_each(|v| *v *= scale);
        Ok(self.estimate(out, KKind::LocalHomogeneous, Some(i)))
    }

    pub fn local_inhomogeneous(&self, i: usize, weights: &WeightingIntensity) -> Result<KEstimate> {
        self.check_index(i)?;
        let lambda = weights.resolve(&self.pattern)?;
        let inv: Vec<f64> = lambda.iter().map(|l| 1.0 / l).collect();
        let mut out = vec![0.0; self.grid().len()];
        self.pairs.weighted_neighbor_sums(i, &inv, &mut out);
        let scale = self.local_inhom_scale() * inv[i];
        out.iter_mut().for_each(|v| *v *= scale);
        Ok(self.estimate(out, KKind::LocalInhomogeneous, Some(i)))
    }
}

pub fn k_homog(pattern: &PointPattern, grid: &LagGrid) -> Result<KEstimate> {
    Ok(KEstimator::new(pattern, grid)?.homogeneous())
}

pub fn k_inhom(pattern: &PointPattern, grid: &LagGrid, weights: &WeightingIntensity) -> Result<KEstimate> {
    KEstimator::new(pattern, grid)?.inhomogeneous(weights)
}

pub fn k_local_homog(pattern: &PointPattern, grid: &LagGrid, i: usize) -> Result<KEstimate> {
    KEstimator::new(pattern, grid)?.local_homogeneous(i)
}

pub fn k_local_inhom(pattern: &PointPattern, grid: &LagGrid, i: usize, weights: &WeightingIntensity) -> Result<KEstimate> {
    KEstimator::new(pattern, grid)?.local_inhomogeneous(i, weights)
}

/// Poisson reference: πr²h in space-time, πr² in space.
pub fn theoretical_k(grid: &LagGrid) -> KEstimate {
    let values = grid
        .cells()
        .map(|(_, r, h)| std::f64::consts::PI * r * r * h.unwrap_or(1.0))
        .collect();
    KEstimate {
        grid: grid.clone(),
        values,
        kind: KKind::Theoretical,
        point_index: None,
    }
}

/// πr²h evaluated at a single lag, including h = 0.
pub fn poisson_reference(r: f64, h: Option<f64>) -> f64 {
    std::f64::consts::PI * r * r * h.unwrap_or(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_lag_grid, Point, Window};
    use crate::simulate::simulate_homogeneous;

    fn two_points() -> PointPattern {
        PointPattern::new(vec![Point::new(0.3, 0.5, 0.5), Point::new(0.4, 0.5, 0.55)], Window::unit_cube()).unwrap()
    }

    #[test]
    fn single_pair_indicator() {
        let p = two_points();
        let g = LagGrid::new(vec![0.05, 0.2], Some(vec![0.01, 0.1])).unwrap();
        let k = KEstimator::new(&p, &g).unwrap();
        let mut out = vec![0.0; 4];
        k.pairs().weighted_pair_sums(&[1.0, 1.0], &mut out);
        assert_eq!(out, vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn lags_below_min_distance_give_zero() {
        let p = simulate_homogeneous(100.0, &Window::unit_square(), 1).unwrap();
        let g = LagGrid::new(vec![1e-9, 2e-9], None).unwrap();
        assert!(k_homog(&p, &g).unwrap().values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_few_points() {
        let p = PointPattern::new(vec![Point::spatial(0.5, 0.5)], Window::unit_square()).unwrap();
        let g = make_lag_grid(p.window(), 5, None).unwrap();
        assert!(matches!(k_homog(&p, &g), Err(Error::InsufficientPoints { .. })));
    }

    #[test]
    fn constant_weights_reduce_to_homogeneous() {
        let w = Window::unit_cube();
        let p = simulate_homogeneous(200.0, &w, 3).unwrap();
        let g = make_lag_grid(&w, 15, Some(15)).unwrap();
        let c = 3.7;
        let kh = k_homog(&p, &g).unwrap();
        let ki = k_inhom(&p, &g, &WeightingIntensity::Values(vec![c; p.len()])).unwrap();
        let n = p.len() as f64;
        let factor = n * (n - 1.0) / (w.volume() * w.volume() * c * c);
        for (a, b) in kh.values.iter().zip(&ki.values) {
            assert!((a * factor - b).abs() <= 1e-12 * b.abs().max(1e-300));
        }
    }

    #[test]
    fn local_constant_weights_match_local_homogeneous() {
        let w = Window::unit_square();
        let p = simulate_homogeneous(150.0, &w, 8).unwrap();
        let g = make_lag_grid(&w, 30, None).unwrap();
        let est = KEstimator::new(&p, &g).unwrap();
        let rate = p.average_intensity();
        let wts = WeightingIntensity::Values(vec![rate; p.len()]);
        for i in [0, 7, p.len() - 1] {
            let a = est.local_homogeneous(i).unwrap();
            let b = est.local_inhomogeneous(i, &wts).unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-12));
            }
        }
    }

    #[test]
    fn local_counts_sum_to_twice_pairs() {
        let w = Window::unit_cube();
        let p = simulate_homogeneous(120.0, &w, 5).unwrap();
        let g = make_lag_grid(&w, 10, Some(10)).unwrap();
        let idx = PairIndex::new(&p, &g).unwrap();
        let ones = vec![1.0; p.len()];
        let mut global = vec![0.0; g.len()];
        idx.weighted_pair_sums(&ones, &mut global);
        let mut total = vec![0.0; g.len()];
        let mut buf = vec![0.0; g.len()];
        for i in 0..p.len() {
            idx.weighted_neighbor_sums(i, &ones, &mut buf);
            total.iter_mut().zip(&buf).for_each(|(t, b)| *t += b);
        }
        for (t, g) in total.iter().zip(&global) {
            assert_eq!(*t, 2.0 * g);
        }
    }

    #[test]
    fn local_average_equals_global_inhomogeneous() {
        let w = Window::unit_square();
        let p = simulate_homogeneous(80.0, &w, 11).unwrap();
        let g = make_lag_grid(&w, 20, None).unwrap();
        let est = KEstimator::new(&p, &g).unwrap();
        let wts = WeightingIntensity::Values((0..p.len()).map(|i| 50.0 + i as f64).collect());
        let global = est.inhomogeneous(&wts).unwrap();
        let mut avg = vec![0.0; g.len()];
        for i in 0..p.len() {
            let l = est.local_inhomogeneous(i, &wts).unwrap();
            avg.iter_mut().zip(&l.values).for_each(|(a, v)| *a += v / p.len() as f64);
        }
        for (a, b) in avg.iter().zip(&global.values) {
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1e-12));
        }
    }

    #[test]
    fn isolated_point_has_zero_local_k() {
        let w = Window::unit_square();
        let pts = vec![Point::spatial(0.01, 0.01), Point::spatial(0.9, 0.9), Point::spatial(0.92, 0.9)];
        let p = PointPattern::new(pts, w).unwrap();
        let g = make_lag_grid(&w, 10, None).unwrap();
        assert!(k_local_homog(&p, &g, 0).unwrap().values.iter().all(|&v| v == 0.0));
        let wts = WeightingIntensity::Values(vec![2.0, 3.0, 4.0]);
        assert!(k_local_inhom(&p, &g, 0, &wts).unwrap().values.iter().all(|&v| v == 0.0));
        assert!(k_local_homog(&p, &g, 3).is_err());
    }

    #[test]
    fn bad_weight_is_reported() {
        let w = Window::unit_square();
        let p = simulate_homogeneous(20.0, &w, 2).unwrap();
        let g = make_lag_grid(&w, 5, None).unwrap();
        let mut v = vec![1.0; p.len()];
        v[4] = 0.0;
        match k_inhom(&p, &g, &WeightingIntensity::Values(v)) {
            Err(Error::InvalidWeight { index, .. }) => assert_eq!(index, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn theoretical_values() {
        let g = LagGrid::new(vec![0.1], Some(vec![0.1])).unwrap();
        assert!((theoretical_k(&g).values[0] - 0.0031416).abs() < 1e-7);
        let g = LagGrid::new(vec![0.25], None).unwrap();
        assert!((theoretical_k(&g).values[0] - std::f64::consts::PI / 16.0).abs() < 1e-12);
        assert_eq!(poisson_reference(0.3, Some(0.0)), 0.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn pattern_strategy() -> impl Strategy<Value = Vec<(f64, f64, f64)>> {
            proptest::collection::vec((0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64), 2..40)
        }

        proptest! {
            #[test]
            fn monotone_and_label_invariant(raw in pattern_strategy(), seed in 0u64..1000) {
                let w = Window::unit_cube();
                let pts: Vec<Point> = raw.iter().map(|&(x, y, t)| Point::new(x, y, t)).collect();
                let Ok(p) = PointPattern::new(pts.clone(), w) else { return Ok(()); };
                let g = make_lag_grid(&w, 8, Some(6)).unwrap();
                let wts: Vec<f64> = (0..p.len()).map(|i| 1.0 + ((i as u64 * 7 + seed) % 13) as f64).collect();
                let k = k_inhom(&p, &g, &WeightingIntensity::Values(wts.clone())).unwrap();
                prop_assert!(k.is_monotone());
                prop_assert!(k_homog(&p, &g).unwrap().is_monotone());
                prop_assert!(k_local_inhom(&p, &g, 0, &WeightingIntensity::Values(wts.clone())).unwrap().is_monotone());

                let mut perm: Vec<usize> = (0..pts.len()).collect();
                perm.reverse();
                let p2 = PointPattern::new(perm.iter().map(|&i| pts[i]).collect(), w).unwrap();
                let w2: Vec<f64> = perm.iter().map(|&i| wts[i]).collect();
                let k2 = k_inhom(&p2, &g, &WeightingIntensity::Values(w2)).unwrap();
                for (a, b) in k.values.iter().zip(&k2.values) {
                    prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-12));
                }
            }
        }
    }
}
