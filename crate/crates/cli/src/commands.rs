use std::io::Write as _;
use std::path::{Path, PathBuf};

use kcontrast::diagnostics::{
    default_r_grid, log_spaced, oracle_r_grid, residual_selection, select_r_oracle_at, EvalGrid, ResidualCriterion,
    ResidualSelectOptions,
};
use kcontrast::fit::{fit_local_problem, fit_two_stage, fit_unpenalized};
use kcontrast::io::{pattern_to_csv, provenance_lines};
use kcontrast::simulate::scenario_pattern;
use kcontrast::study::{quantile, summary_csv};
use kcontrast::{
    make_lag_grid, run_mc_study, select_bandwidth, simulate_inhomogeneous, smooth_residual_field, theoretical_k,
    BandwidthRule, ContrastConfig, ContrastProblem, Covariate, FitOptions, FitPlan, FittedIntensity, Interval,
    KEstimator, LagWeight, LocalFitOptions, LocalPenalty, LogLinearFamily, PenaltySpec, PointPattern,
    ResidualOptions, ScenarioId, ScenarioSpec, StudyConfig, WeightingIntensity, Window,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::settings::require;
use crate::{
    BandwidthRuleArg, CliError, Criterion, Estimator, FitArgs, GridArgs, KestArgs, OptimArgs, PatternArgs, Phi, Plan,
    RGridArgs, ResidualArgs, Rule, SelectRArgs, SimulateArgs, StudyArgs,
};

type Result<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Errors in user-supplied input are usage errors rather than computation failures.
fn input<T>(r: kcontrast::Result<T>) -> Result<T> {
    r.map_err(|e| usage(e.to_string()))
}

fn to_json<T: Serialize>(v: &T) -> Result<Value> {
    Ok(serde_json::to_value(v).map_err(kcontrast::Error::from)?)
}

fn parse_window(v: &Option<Vec<f64>>) -> Result<Option<Window>> {
    let iv = |lo: f64, hi: f64| input(Interval::new(lo, hi));
    match v.as_deref() {
        None => Ok(None),
        Some(&[x0, x1, y0, y1]) => Ok(Some(Window::spatial(iv(x0, x1)?, iv(y0, y1)?))),
        Some(&[x0, x1, y0, y1, t0, t1]) => Ok(Some(Window::spatio_temporal(iv(x0, x1)?, iv(y0, y1)?, iv(t0, t1)?))),
        Some(_) => Err(usage("--window takes 4 or 6 comma-separated numbers")),
    }
}

fn load_pattern(a: &PatternArgs) -> Result<PointPattern> {
    let path = require(&a.pattern, "pattern")?;
    kcontrast::read_pattern_csv(&path, parse_window(&a.window)?)
        .map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn family(model: &Option<String>) -> Result<LogLinearFamily> {
    input(LogLinearFamily::parse(&require(model, "model")?))
}

fn contrast_config(g: &GridArgs, window: &Window) -> Result<Option<ContrastConfig>> {
    let st = window.is_spatio_temporal();
    let mut cfg = match (&g.contrast, g.n_r, g.n_h) {
        (Some(_), Some(_), _) | (Some(_), _, Some(_)) => {
            return Err(usage("give either a contrast configuration or --n-r/--n-h"))
        }
        (Some(c), None, None) => c.clone(),
        (None, None, None) if g.phi.is_none() => return Ok(None),
        (None, nr, nh) => {
            let nh = if st { Some(nh.unwrap_or(15)) } else { nh };
            let grid = input(make_lag_grid(window, nr.unwrap_or(if st { 15 } else { 153 }), nh))?;
            ContrastConfig::new(grid)
        }
    };
    if let Some(phi) = g.phi {
        cfg.phi = match phi {
            Phi::Constant => LagWeight::Constant,
            Phi::InverseSquare => LagWeight::InverseSquare,
        };
    }
    Ok(Some(cfg))
}

fn pattern_contrast(g: &GridArgs, pattern: &PointPattern) -> Result<ContrastConfig> {
    match contrast_config(g, pattern.window())? {
        Some(c) => Ok(c),
        None => input(ContrastConfig::standard(pattern)),
    }
}

fn fit_options(o: &OptimArgs, seed: u64) -> Result<FitOptions> {
    let mut f = FitOptions::seeded(seed);
    if let Some(r) = o.restarts {
        if r == 0 {
            return Err(usage("--restarts must be at least 1"));
        }
        f.minimize.restarts = r;
    }
    f.compute_se = !o.no_se.unwrap_or(false);
    Ok(f)
}

fn header<T: Serialize>(command: &str, settings: &T, extra: &[(&str, Value)]) -> Result<String> {
    let mut entries = vec![("command", json!(command)), ("config", to_json(settings)?)];
    entries.extend(extra.iter().map(|(k, v)| (*k, v.clone())));
    let refs: Vec<(&str, &Value)> = entries.iter().map(|(k, v)| (*k, v)).collect();
    Ok(provenance_lines(&refs)?)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(kcontrast::Error::from)?,
        None => std::io::stdout().write_all(text.as_bytes()).map_err(kcontrast::Error::from)?,
    }
    Ok(())
}

fn pretty(v: &Value) -> Result<String> {
    Ok(serde_json::to_string_pretty(v).map_err(kcontrast::Error::from)? + "\n")
}

fn sidecar(out: &Path) -> Result<PathBuf> {
    let side = out.with_extension("json");
    if side == out {
        return Err(usage("--out must not have a .json extension; the sidecar takes that name"));
    }
    Ok(side)
}

fn uses_time(f: &LogLinearFamily) -> bool {
    f.basis().iter().any(|c| matches!(c, Covariate::T))
}

pub fn simulate(a: SimulateArgs) -> Result<()> {
    let seed = require(&a.seed, "seed")?;
    let pattern = match (&a.scenario, &a.model) {
        (Some(_), Some(_)) => return Err(usage("--scenario and --model cannot be combined")),
        (None, None) => return Err(usage("missing required setting --scenario or --model")),
        (Some(s), None) => {
            if a.window.is_some() {
                return Err(usage("a scenario fixes its own window"));
            }
            let id: ScenarioId = input(s.parse())?;
            let spec = input(ScenarioSpec::new(id, a.theta.clone().unwrap_or_else(|| id.default_theta())))?;
            scenario_pattern(&spec, seed)?
        }
        (None, Some(_)) => {
            let fam = family(&a.model)?;
            let model = input(fam.with_theta(require(&a.theta, "theta")?))?;
            let window = parse_window(&a.window)?.unwrap_or_else(|| {
                if uses_time(&fam) {
                    Window::unit_cube()
                } else {
                    Window::unit_square()
                }
            });
            simulate_inhomogeneous(&model, &window, seed)?
        }
    };
    let text = header("simulate", &a, &[("n", json!(pattern.len()))])? + &pattern_to_csv(&pattern);
    emit(a.out.as_deref(), &text)
}

pub fn kest(a: KestArgs) -> Result<()> {
    let out = require(&a.out, "out")?;
    let side = sidecar(&out)?;
    let pattern = load_pattern(&a.input)?;
    let grid = pattern_contrast(&a.grid, &pattern)?.grid;
    let weights = match (&a.model, &a.theta) {
        (Some(_), Some(theta)) => Some(WeightingIntensity::Model(input(family(&a.model)?.with_theta(theta.clone()))?)),
        (None, None) => None,
        _ => return Err(usage("--model and --theta must be given together")),
    };
    let kind = a.estimator.unwrap_or(if weights.is_some() {
        Estimator::Inhomogeneous
    } else {
        Estimator::Homogeneous
    });
    let need_w = || weights.clone().ok_or_else(|| usage("this estimator needs --model and --theta"));
    let need_i = || {
        let i = require(&a.point, "point")?;
        if i >= pattern.len() {
            return Err(usage(format!("--point {i} is out of range for {} points", pattern.len())));
        }
        Ok(i)
    };
    let est = KEstimator::new(&pattern, &grid)?;
    let k = match kind {
        Estimator::Homogeneous => est.homogeneous(),
        Estimator::Inhomogeneous => est.inhomogeneous(&need_w()?)?,
        Estimator::LocalHomogeneous => est.local_homogeneous(need_i()?)?,
        Estimator::LocalInhomogeneous => est.local_inhomogeneous(need_i()?, &need_w()?)?,
        Estimator::Theoretical => theoretical_k(&grid),
    };
    let mut text = header("kest", &a, &[])?;
    text.push_str(if grid.is_spatio_temporal() { "r,h,value\n" } else { "r,value\n" });
    for (idx, r, h) in grid.cells() {
        match h {
            Some(h) => text.push_str(&format!("{r},{h},{}\n", k.values[idx])),
            None => text.push_str(&format!("{r},{}\n", k.values[idx])),
        }
    }
    emit(Some(&out), &text)?;
    let meta = json!({
        "kind": k.kind,
        "point_index": k.point_index,
        "grid": k.grid,
        "weighting": weights.as_ref().map_or("none".to_string(), |w| w.describe()),
        "n": pattern.len(),
        "config": to_json(&a)?,
    });
    emit(Some(&side), &pretty(&meta)?)
}

struct Prepared {
    pattern: PointPattern,
    family: LogLinearFamily,
    config: ContrastConfig,
    opts: FitOptions,
}

impl Prepared {
    fn new(input: &PatternArgs, model: &Option<String>, grid: &GridArgs, optim: &OptimArgs) -> Result<Self> {
        let seed = require(&optim.seed, "seed")?;
        let pattern = load_pattern(input)?;
        let family = family(model)?;
        let config = pattern_contrast(grid, &pattern)?;
        Ok(Self {
            opts: fit_options(optim, seed)?,
            pattern,
            family,
            config,
        })
    }

    fn problem(&self) -> Result<ContrastProblem> {
        Ok(ContrastProblem::new(&self.pattern, &self.family, &self.config)?)
    }
}

pub fn fit(a: FitArgs) -> Result<()> {
    let p = Prepared::new(&a.input, &a.model, &a.grid, &a.optim)?;
    let penalty = match (a.penalty_r, a.tau) {
        (Some(radius), tau) => Some(PenaltySpec { radius, tau }),
        (None, Some(_)) => return Err(usage("--tau needs --penalty-R")),
        (None, None) => None,
    };
    let result = fit_two_stage(&p.problem()?, penalty, &p.opts)?;
    let mut v = to_json(&result)?;
    v["model"] = json!(p.family.formula());
    v["config"] = to_json(&a)?;
    emit(a.out.as_deref(), &pretty(&v)?)
}

pub fn local_fit(a: FitArgs) -> Result<()> {
    if a.tau.is_some() {
        return Err(usage("local fits take only a radius; use tau = 1/R²"));
    }
    let p = Prepared::new(&a.input, &a.model, &a.grid, &a.optim)?;
    let opts = LocalFitOptions {
        fit: p.opts.clone(),
        penalty: a.penalty_r.map_or(LocalPenalty::None, LocalPenalty::Fixed),
        point_phi: None,
    };
    let result = fit_local_problem(&p.problem()?, &opts)?;
    let summary: Vec<Value> = p
        .family
        .names()
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let mut v = result.parameter(j);
            v.retain(|x| x.is_finite());
            v.sort_by(f64::total_cmp);
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            json!({
                "param": name,
                "mean": mean,
                "q25": quantile(&v, 0.25),
                "q50": quantile(&v, 0.5),
                "q75": quantile(&v, 0.75),
                "n_used": v.len(),
            })
        })
        .collect();
    let v = json!({
        "model": p.family.formula(),
        "summary": summary,
        "result": to_json(&result)?,
        "config": to_json(&a)?,
    });
    emit(a.out.as_deref(), &pretty(&v)?)
}

fn criterion(c: Option<Criterion>) -> ResidualCriterion {
    match c.unwrap_or(Criterion::Absolute) {
        Criterion::Absolute => ResidualCriterion::Absolute,
        Criterion::Signed => ResidualCriterion::Signed,
        Criterion::IntegratedAbsolute => ResidualCriterion::IntegratedAbsolute,
    }
}

/// The requested radii, or `None` when nothing was set.
fn radii(a: &RGridArgs, default_count: usize) -> Result<Option<Vec<f64>>> {
    let ranged = a.r_min.is_some() || a.r_max.is_some() || a.r_count.is_some();
    match (&a.r_grid, ranged) {
        (Some(_), true) => Err(usage("give either --r-grid or --r-min/--r-max/--r-count")),
        (Some(g), false) => Ok(Some(g.clone())),
        (None, true) => {
            let (lo, hi, n) = (a.r_min.unwrap_or(0.25), a.r_max.unwrap_or(10.0), a.r_count.unwrap_or(default_count));
            if !(lo > 0.0 && hi > lo && n >= 2) {
                return Err(usage("radius range needs 0 < r-min < r-max and r-count >= 2"));
            }
            Ok(Some(log_spaced(lo, hi, n)))
        }
        (None, false) => Ok(None),
    }
}

pub fn select_r(a: SelectRArgs) -> Result<()> {
    let out = require(&a.out, "out")?;
    let side = sidecar(&out)?;
    let rule = a.rule.unwrap_or(Rule::Residual);
    let truth = match rule {
        Rule::Oracle => Some(require(&a.truth, "truth")?),
        Rule::Residual => None,
    };
    let p = Prepared::new(&a.input, &a.model, &a.grid, &a.optim)?;
    if truth.as_ref().is_some_and(|t| t.len() != p.family.dim()) {
        return Err(usage(format!("--truth needs {} values", p.family.dim())));
    }
    let grid = match rule {
        Rule::Residual => radii(&a.radii, 40)?.unwrap_or_else(default_r_grid),
        Rule::Oracle => radii(&a.radii, 20)?.unwrap_or_else(oracle_r_grid),
    };
    let problem = p.problem()?;
    let stage_one = fit_unpenalized(&problem, &p.opts)?;
    let (sel, fit) = match &truth {
        Some(t) => {
            let (sel, fit) = select_r_oracle_at(&problem, &stage_one.theta_hat, t, &grid, &p.opts)?;
            (sel, Some(fit))
        }
        None => {
            let opts = ResidualSelectOptions {
                criterion: criterion(a.radii.criterion),
                bandwidth: a.radii.bandwidth,
                fit: p.opts.clone(),
                ..Default::default()
            };
            residual_selection(&problem, &stage_one.theta_hat, &grid, &opts)?
        }
    };
    let mut text = header("select-r", &a, &[])?;
    text.push_str("R,criterion");
    for n in p.family.names() {
        text.push_str(&format!(",{n}"));
    }
    text.push('\n');
    for ((r, c), est) in sel.r_grid.iter().zip(&sel.criterion_values).zip(&sel.estimates) {
        text.push_str(&format!("{r},{c}"));
        for e in est {
            text.push_str(&format!(",{e}"));
        }
        text.push('\n');
    }
    emit(Some(&out), &text)?;
    let summary = json!({
        "rule": sel.rule,
        "chosen_R": sel.chosen_r,
        "chosen_theta": sel.chosen_theta(),
        "param_names": p.family.names(),
        "unpenalized_theta": stage_one.theta_hat,
        "excluded": sel.excluded,
        "fit": fit,
        "model": p.family.formula(),
        "config": to_json(&a)?,
    });
    emit(Some(&side), &pretty(&summary)?)
}

pub fn residuals(a: ResidualArgs) -> Result<()> {
    let pattern = load_pattern(&a.input)?;
    let fam = family(&a.model)?;
    let theta = match &a.theta {
        Some(t) => {
            if a.penalty_r.is_some() {
                return Err(usage("--penalty-R applies only when the model is fitted"));
            }
            t.clone()
        }
        None => {
            let opts = fit_options(&a.optim, require(&a.optim.seed, "seed")?)?;
            let cfg = pattern_contrast(&a.grid, &pattern)?;
            let problem = ContrastProblem::new(&pattern, &fam, &cfg)?;
            fit_two_stage(&problem, a.penalty_r.map(PenaltySpec::radius), &opts)?.theta_hat
        }
    };
    let model = input(fam.with_theta(theta.clone()))?;
    let bandwidth = match (a.bandwidth, a.bandwidth_rule) {
        (Some(_), Some(_)) => return Err(usage("give either --bandwidth or --bandwidth-rule")),
        (Some(b), None) => b,
        (None, rule) => {
            let rule = match rule.unwrap_or(BandwidthRuleArg::NormalScale) {
                BandwidthRuleArg::NormalScale => BandwidthRule::NormalScale,
                BandwidthRuleArg::CvMse => BandwidthRule::CvMse,
            };
            select_bandwidth(&pattern, rule)?.spatial()
        }
    };
    let cells = a.cells.unwrap_or(128);
    if cells == 0 {
        return Err(usage("--cells must be positive"));
    }
    let opts = ResidualOptions {
        grid: EvalGrid { nx: cells, ny: cells },
        edge_correction: !a.no_edge_correction.unwrap_or(false),
        ..Default::default()
    };
    let field = smooth_residual_field(&pattern, &FittedIntensity::Model(model), bandwidth, &opts)?;
    for w in &field.warnings {
        eprintln!("warning: {w}");
    }
    let mut text = header(
        "residuals",
        &a,
        &[
            ("theta", json!(theta)),
            ("bandwidth", json!(bandwidth)),
            ("integral", json!(field.integral())),
            ("warnings", json!(field.warnings)),
        ],
    )?;
    text.push_str("x,y,residual,data,model\n");
    for (iy, y) in field.y.iter().enumerate() {
        for (ix, x) in field.x.iter().enumerate() {
            let k = iy * field.x.len() + ix;
            text.push_str(&format!(
                "{x},{y},{},{},{}\n",
                field.values[k], field.data_smooth[k], field.model_smooth[k]
            ));
        }
    }
    emit(a.out.as_deref(), &text)
}

pub fn mc_study(a: StudyArgs) -> Result<()> {
    let id: ScenarioId = input(require(&a.scenario, "scenario")?.parse())?;
    let seed = require(&a.optim.seed, "seed")?;
    let out = require(&a.out, "out")?;
    let plan = a.plan.unwrap_or(Plan::Unpenalized);
    if a.penalty_r.is_some() && !matches!(plan, Plan::FixedR | Plan::Local) {
        return Err(usage("--penalty-R applies to the fixed-r and local plans"));
    }
    let grid = radii(&a.radii, if plan == Plan::OracleR { 20 } else { 40 })?;
    if grid.is_some() && !matches!(plan, Plan::OracleR | Plan::ResidualR) {
        return Err(usage("radius grids apply to the oracle-r and residual-r plans"));
    }
    let fit_plan = match plan {
        Plan::Unpenalized => FitPlan::Unpenalized,
        Plan::FixedR => FitPlan::FixedR {
            radius: require(&a.penalty_r, "penalty-R")?,
        },
        Plan::OracleR => FitPlan::OracleR { r_grid: grid },
        Plan::ResidualR => FitPlan::ResidualR {
            r_grid: grid,
            options: ResidualSelectOptions {
                criterion: criterion(a.radii.criterion),
                bandwidth: a.radii.bandwidth,
                ..Default::default()
            },
        },
        Plan::Local => FitPlan::Local { radius: a.penalty_r },
    };
    let mut cfg = StudyConfig::new(id, a.reps.unwrap_or(100), seed, fit_plan);
    cfg.theta = a.theta.clone();
    cfg.contrast = contrast_config(&a.grid, &id.window())?;
    cfg.fit = fit_options(&a.optim, 0)?;
    cfg.output = Some(out.clone());
    input(cfg.spec())?;
    let report = run_mc_study(&cfg)?;
    let v = json!({
        "true_theta": report.true_theta,
        "summary": report.summary,
        "failures": report.failures,
        "singular_share": report.singular_share,
        "mean_R_used": report.mean_r_used(),
        "study": to_json(&cfg)?,
        "config": to_json(&a)?,
    });
    emit(Some(&out.join("report.json")), &pretty(&v)?)?;
    emit(None, &kcontrast::study::csv_body(&summary_csv(&report)?))
}

