//! Minimum-contrast estimation of first-order intensities for spatial and
//! spatio-temporal point processes, using intensity-weighted K-functions.

pub mod diagnostics;
pub mod error;
pub mod fit;
pub mod io;
pub mod kstat;
pub mod model;
mod serde_nan;
pub mod simulate;
pub mod study;

pub use error::{Error, Result};
pub use kstat::{k_homog, k_inhom, k_local_homog, k_local_inhom, theoretical_k, KEstimator, PairIndex, WeightingIntensity};
pub use model::{
    integrate_intensity, make_lag_grid, Covariate, IntensityModel, Interval, KEstimate, KKind, LagGrid, LogLinearFamily,
    Point, PointPattern, QuadratureResolution, Window,
};
pub use simulate::{scenario_pattern, simulate_homogeneous, simulate_inhomogeneous, stream_rng, ScenarioId, ScenarioSpec};
pub use fit::{
    contrast_objective, fit_global, fit_local, fit_penalized, fit_unpenalized, penalty_term, ContrastConfig, ContrastProblem,
    FitOptions, FitResult, LagWeight, LocalFitOptions, LocalFitResult, LocalPenalty, PenaltyConfig, PenaltySpec,
};
pub use diagnostics::{
    penalized_path, select_bandwidth, select_r_oracle, select_r_oracle_at, select_r_residual, smooth_residual_field, Bandwidth, BandwidthRule, FittedIntensity,
    RSelection, ResidualField, ResidualOptions,
};
pub use io::{read_pattern_csv, write_pattern_csv};
pub use study::{aggregate, run_mc_study, FitPlan, RawRow, StudyConfig, StudyReport, SummaryRow};
