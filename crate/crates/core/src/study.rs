//! Monte Carlo studies over the simulation scenarios and their aggregation.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{default_r_grid, oracle_r_grid, residual_selection, select_r_oracle_at, ResidualSelectOptions};
use crate::error::{Error, Result};
use crate::fit::{
    fit_local_problem, fit_two_stage, fit_unpenalized, ContrastConfig, ContrastProblem, FitOptions,
    FitResult, LocalFitOptions, LocalPenalty, PenaltySpec,
};
use crate::io::provenance_lines;
use crate::simulate::{child_seed, scenario_pattern_with, stream_rng, ScenarioId, ScenarioSpec};

/// Largest share of failed replicates a study tolerates.
const MAX_FAILED_SHARE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FitPlan {
    Unpenalized,
    FixedR {
        #[serde(rename = "R")]
        radius: f64,
    },
    /// Radius chosen per replicate by distance from the truth (simulation only).
    OracleR {
        #[serde(default)]
        r_grid: Option<Vec<f64>>,
    },
    /// Radius chosen per replicate from smoothed residuals.
    ResidualR {
        #[serde(default)]
        r_grid: Option<Vec<f64>>,
        #[serde(default)]
        options: ResidualSelectOptions,
    },
    /// Per-point fits, optionally penalized with a common radius.
    Local {
        #[serde(default, rename = "R")]
        radius: Option<f64>,
    },
}

impl FitPlan {
    pub fn is_local(&self) -> bool {
        matches!(self, FitPlan::Local { .. })
    }
}

fn default_replicates() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub scenario: ScenarioId,
    /// Generating parameters; the scenario's own when absent.
    #[serde(default)]
    pub theta: Option<Vec<f64>>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    pub seed: u64,
    pub plan: FitPlan,
    /// Lag grid and weights; the scenario's standard grid when absent.
    #[serde(default)]
    pub contrast: Option<ContrastConfig>,
    #[serde(default)]
    pub fit: FitOptions,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl StudyConfig {
    pub fn new(scenario: ScenarioId, replicates: usize, seed: u64, plan: FitPlan) -> Self {
        Self {
            scenario,
            theta: None,
            replicates,
            seed,
            plan,
            contrast: None,
            fit: FitOptions::default(),
            output: None,
        }
    }

    pub fn spec(&self) -> Result<ScenarioSpec> {
        ScenarioSpec::new(
            self.scenario,
            self.theta.clone().unwrap_or_else(|| self.scenario.default_theta()),
        )
    }

    fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::Config("a study needs at least one replicate".into()));
        }
        if let FitPlan::FixedR { radius } | FitPlan::Local { radius: Some(radius) } = &self.plan {
            if !(*radius > 0.0 && radius.is_finite()) {
                return Err(Error::Config(format!("penalty radius {radius} must be positive")));
            }
        }
        Ok(())
    }
}

/// One estimate of one parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRow {
    pub rep: usize,
    pub param: String,
    #[serde(rename = "true")]
    pub truth: f64,
    pub estimate: f64,
    pub se: f64,
    pub converged: bool,
    #[serde(rename = "R_used")]
    pub r_used: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub param: String,
    #[serde(rename = "true")]
    pub truth: f64,
    pub mean: f64,
    pub sqrt_mse: f64,
    pub mean_se: f64,
    pub q25: Option<f64>,
    pub q50: Option<f64>,
    pub q75: Option<f64>,
    /// Finite estimates that entered the row.
    pub n_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub rep: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub config: StudyConfig,
    pub true_theta: Vec<f64>,
    pub summary: Vec<SummaryRow>,
    pub raw: Vec<RawRow>,
    pub failures: Vec<ReplicateFailure>,
    /// Share of replicates whose Hessian was singular (global plans only).
    pub singular_share: Option<f64>,
}

impl StudyReport {
    pub fn row(&self, param: &str) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.param == param)
    }

    /// Mean of the radii actually used, over replicates.
    pub fn mean_r_used(&self) -> Option<f64> {
        let mut seen = std::collections::BTreeMap::new();
        for r in self.raw.iter().filter(|r| r.r_used.is_finite()) {
            seen.entry(r.rep).or_insert(r.r_used);
        }
        (!seen.is_empty()).then(|| seen.values().sum::<f64>() / seen.len() as f64)
    }

    pub fn estimates(&self, param: &str) -> Vec<f64> {
        self.raw
            .iter()
            .filter(|r| r.param == param && r.estimate.is_finite())
            .map(|r| r.estimate)
            .collect()
    }
}

/// Sample quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean, sqrt(MSE) and mean s.e. per parameter, in first-appearance order. Non-finite
/// estimates are skipped; non-finite standard errors are skipped in `mean_se`.
pub fn aggregate(raw: &[RawRow], with_quantiles: bool) -> Result<Vec<SummaryRow>> {
    if raw.is_empty() {
        return Err(Error::Config("cannot aggregate an empty table".into()));
    }
    let mut params: Vec<(&str, f64)> = Vec::new();
    for r in raw {
        if !params.iter().any(|(p, _)| *p == r.param) {
            params.push((&r.param, r.truth));
        }
    }
    Ok(params
        .into_iter()
        .map(|(param, truth)| {
            let mut est = Vec::new();
            let (mut se_sum, mut se_n) = (0.0, 0usize);
            for r in raw.iter().filter(|r| r.param == param && r.estimate.is_finite()) {
                est.push(r.estimate);
                if r.se.is_finite() {
                    se_sum += r.se;
                    se_n += 1;
                }
            }
            let n = est.len() as f64;
            let mean = est.iter().sum::<f64>() / n;
            let mse = est.iter().map(|e| (e - truth).powi(2)).sum::<f64>() / n;
            let q = |p: f64| {
                with_quantiles.then(|| {
                    let mut s = est.clone();
                    s.sort_by(f64::total_cmp);
                    quantile(&s, p)
                })
            };
            SummaryRow {
                param: param.to_string(),
                truth,
                mean,
                sqrt_mse: mse.sqrt(),
                mean_se: if se_n > 0 { se_sum / se_n as f64 } else { f64::NAN },
                q25: q(0.25),
                q50: q(0.5),
                q75: q(0.75),
                n_used: est.len(),
            }
        })
        .collect())
}

struct Replicate {
    rows: Vec<RawRow>,
    singular: bool,
}

fn global_rows(rep: usize, names: &[String], truth: &[f64], fit: &FitResult, r_used: f64) -> Vec<RawRow> {
    names
        .iter()
        .enumerate()
        .map(|(j, name)| RawRow {
            rep,
            param: name.clone(),
            truth: truth[j],
            estimate: fit.theta_hat[j],
            se: fit.std_errors[j],
            converged: fit.converged,
            r_used,
        })
        .collect()
}

fn run_replicate(config: &StudyConfig, spec: &ScenarioSpec, rep: usize) -> Result<Replicate> {
    let mut rng: ChaCha8Rng = stream_rng(config.seed, rep as u64);
    let pattern = scenario_pattern_with(spec, &mut rng)?;
    let opts = FitOptions {
        seed: child_seed(&mut rng),
        ..config.fit.clone()
    };
    let contrast = match &config.contrast {
        Some(c) => c.clone(),
        None => ContrastConfig::standard(&pattern)?,
    };
    let family = spec.model.family();
    let problem = ContrastProblem::new(&pattern, family, &contrast)?;
    let names = family.names();
    let truth = spec.true_theta();
    let global = |fit: FitResult, r: f64| Replicate {
        singular: fit.hessian_singular,
        rows: global_rows(rep, names, truth, &fit, r),
    };
    match &config.plan {
        FitPlan::Unpenalized => Ok(global(fit_unpenalized(&problem, &opts)?, f64::NAN)),
        FitPlan::FixedR { radius } => Ok(global(
            fit_two_stage(&problem, Some(PenaltySpec::radius(*radius)), &opts)?,
            *radius,
        )),
        FitPlan::OracleR { r_grid } => {
            let grid = r_grid.clone().unwrap_or_else(oracle_r_grid);
            let stage_one = fit_unpenalized(&problem, &opts)?;
            let (sel, fit) = select_r_oracle_at(&problem, &stage_one.theta_hat, truth, &grid, &opts)?;
            Ok(global(fit, sel.chosen_r))
        }
        FitPlan::ResidualR { r_grid, options } => {
            let grid = r_grid.clone().unwrap_or_else(default_r_grid);
            let sel_opts = ResidualSelectOptions {
                fit: opts.clone(),
                ..options.clone()
            };
            let stage_one = fit_unpenalized(&problem, &opts)?;
            let (sel, fit) = residual_selection(&problem, &stage_one.theta_hat, &grid, &sel_opts)?;
            let fit = fit.ok_or_else(|| Error::Diagnostics("chosen radius has no fit".into()))?;
            Ok(global(fit, sel.chosen_r))
        }
        FitPlan::Local { radius } => {
            let local = fit_local_problem(
                &problem,
                &LocalFitOptions {
                    fit: opts,
                    penalty: radius.map_or(LocalPenalty::None, LocalPenalty::Fixed),
                    point_phi: None,
                },
            )?;
            let r_used = radius.unwrap_or(f64::NAN);
            let rows = local
                .points
                .iter()
                .filter_map(|p| p.fit.as_ref())
                .flat_map(|fit| global_rows(rep, names, truth, fit, r_used))
                .collect();
            Ok(Replicate { rows, singular: false })
        }
    }
}

/// Runs every replicate (in parallel), aggregates, and writes `raw.csv` and `summary.csv`
/// when an output directory is configured. Fails when more than 10% of replicates fail.
pub fn run_mc_study(config: &StudyConfig) -> Result<StudyReport> {
    config.validate()?;
    let spec = config.spec()?;
    let outcomes: Vec<Result<Replicate>> = (0..config.replicates)
        .into_par_iter()
        .map(|rep| run_replicate(config, &spec, rep))
        .collect();
    let mut raw = Vec::new();
    let mut failures = Vec::new();
    let mut singular = 0usize;
    for (rep, out) in outcomes.into_iter().enumerate() {
        match out {
            Ok(r) => {
                singular += r.singular as usize;
                raw.extend(r.rows);
            }
            Err(e) => failures.push(ReplicateFailure {
                rep,
                error: e.to_string(),
            }),
        }
    }
    if failures.len() as f64 > MAX_FAILED_SHARE * config.replicates as f64 || raw.is_empty() {
        return Err(Error::Optimization(format!(
            "{} of {} replicates failed (first: {})",
            failures.len(),
            config.replicates,
            failures.first().map_or("", |f| f.error.as_str())
        )));
    }
    let summary = aggregate(&raw, config.plan.is_local())?;
    let report = StudyReport {
        config: config.clone(),
        true_theta: spec.true_theta().to_vec(),
        summary,
        raw,
        singular_share: (!config.plan.is_local())
            .then(|| singular as f64 / (config.replicates - failures.len()) as f64),
        failures,
    };
    if let Some(dir) = &config.output {
        write_report(&report, dir)?;
    }
    Ok(report)
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn header(report: &StudyReport) -> Result<String> {
    provenance_lines(&[
        ("config", &serde_json::to_value(&report.config)?),
        ("true_theta", &serde_json::to_value(&report.true_theta)?),
        ("failed_replicates", &serde_json::to_value(&report.failures)?),
    ])
}

/// `rep,param,true,estimate,se,converged,R_used`
pub fn raw_csv(report: &StudyReport) -> Result<String> {
    let mut out = header(report)?;
    out.push_str("rep,param,true,estimate,se,converged,R_used\n");
    for r in &report.raw {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.rep,
            r.param,
            num(r.truth),
            num(r.estimate),
            num(r.se),
            r.converged,
            num(r.r_used)
        )
        .expect("writing to a String");
    }
    Ok(out)
}

/// `param,true,mean,sqrt_mse,mean_se[,q25,q50,q75]`
pub fn summary_csv(report: &StudyReport) -> Result<String> {
    let mut out = header(report)?;
    summary_body(&report.summary, report.config.plan.is_local(), &mut out);
    Ok(out)
}

fn summary_body(rows: &[SummaryRow], quantiles: bool, out: &mut String) {
    out.push_str("param,true,mean,sqrt_mse,mean_se");
    out.push_str(if quantiles { ",q25,q50,q75\n" } else { "\n" });
    for r in rows {
        write!(out, "{},{},{},{},{}", r.param, num(r.truth), num(r.mean), num(r.sqrt_mse), num(r.mean_se))
            .expect("writing to a String");
        if quantiles {
            let q = |v: Option<f64>| num(v.unwrap_or(f64::NAN));
            write!(out, ",{},{},{}", q(r.q25), q(r.q50), q(r.q75)).expect("writing to a String");
        }
        out.push('\n');
    }
}

pub fn write_report(report: &StudyReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("raw.csv"), raw_csv(report)?)?;
    std::fs::write(dir.join("summary.csv"), summary_csv(report)?)?;
    Ok(())
}

/// Parses a raw table written by [`raw_csv`].
pub fn parse_raw_csv(text: &str) -> Result<Vec<RawRow>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Summary body (without provenance lines) recomputed from a raw table.
pub fn recompute_summary(raw_text: &str, quantiles: bool) -> Result<String> {
    let rows = aggregate(&parse_raw_csv(raw_text)?, quantiles)?;
    let mut out = String::new();
    summary_body(&rows, quantiles, &mut out);
    Ok(out)
}

/// Strips `#` provenance lines.
pub fn csv_body(text: &str) -> String {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect()
}
