use std::path::Path;
use std::process::{Command, Output};

fn kcontrast(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kcontrast"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn body(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).collect()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn simulate_writes_a_pattern_with_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let out = kcontrast(dir.path(), &["simulate", "--scenario", "S3", "--seed", "7", "--out", "p.csv"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = read(dir.path(), "p.csv");
    let rows = body(&text);
    assert_eq!(rows[0], "x,y");
    let mu = 2f64.exp() * (6f64.exp() - 1.0) / 6.0;
    let n = (rows.len() - 1) as f64;
    assert!((n - mu).abs() < 5.0 * mu.sqrt(), "{n} rows");
    assert!(text.lines().any(|l| l.starts_with("# config: ") && l.contains("\"seed\":7")));

    let again = kcontrast(dir.path(), &["simulate", "--scenario", "S3", "--seed", "7"]);
    assert_eq!(String::from_utf8(again.stdout).unwrap().lines().filter(|l| !l.starts_with('#')).count(), rows.len());
}

#[test]
fn fit_reports_theta_and_penalty() {
    let dir = tempfile::tempdir().unwrap();
    assert!(kcontrast(dir.path(), &["simulate", "--scenario", "S3", "--seed", "7", "--out", "p.csv"]).status.success());
    let out = kcontrast(
        dir.path(),
        &["fit", "--pattern", "p.csv", "--model", "exp(a+b*x)", "--penalty-R", "2.5", "--seed", "3"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["theta_hat"].as_array().unwrap().len(), 2);
    for key in ["std_errors", "objective", "converged", "n_evals", "seed"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["penalty"]["R"], 2.5);
    assert_eq!(v["penalty"]["tau"], 0.16);
    assert_eq!(v["penalty"]["center"].as_array().unwrap().len(), 2);
    assert_eq!(v["config"]["penalty_R"], 2.5);
}

#[test]
fn config_file_merges_under_flags() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), r#"{"scenario": "S2", "seed": 5, "out": "a.csv"}"#).unwrap();
    assert!(kcontrast(dir.path(), &["simulate", "--config", "c.json"]).status.success());
    assert!(kcontrast(dir.path(), &["simulate", "--config", "c.json", "--out", "b.csv"]).status.success());
    assert_eq!(body(&read(dir.path(), "a.csv")), body(&read(dir.path(), "b.csv")));
    let c = kcontrast(dir.path(), &["simulate", "--config", "c.json", "--seed", "6", "--out", "c.csv"]);
    assert!(c.status.success());
    assert_ne!(body(&read(dir.path(), "a.csv")), body(&read(dir.path(), "c.csv")));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| kcontrast(dir.path(), args).status.code();
    assert_eq!(code(&["--help"]), Some(0));
    assert_eq!(code(&["no-such-command"]), Some(1));
    assert_eq!(code(&["simulate", "--scenario", "S3", "--bogus"]), Some(1));
    assert_eq!(code(&["simulate", "--scenario", "S3"]), Some(1));
    assert_eq!(code(&["simulate", "--scenario", "S9", "--seed", "1"]), Some(1));
    assert_eq!(code(&["fit", "--pattern", "missing.csv", "--model", "exp(a)", "--seed", "1"]), Some(1));
    std::fs::write(dir.path().join("bad.json"), r#"{"unknown_key": 1}"#).unwrap();
    assert_eq!(code(&["simulate", "--config", "bad.json"]), Some(1));
    std::fs::write(dir.path().join("one.csv"), "x,y\n0.1,0.1\n").unwrap();
    assert_eq!(
        code(&["fit", "--pattern", "one.csv", "--model", "exp(a)", "--seed", "1", "--n-r", "5"]),
        Some(2)
    );
}

#[test]
fn kest_writes_csv_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    assert!(kcontrast(dir.path(), &["simulate", "--scenario", "ST2", "--seed", "2", "--out", "p.csv"]).status.success());
    let out = kcontrast(
        dir.path(),
        &["kest", "--pattern", "p.csv", "--model", "exp(a+b*x)", "--theta", "2,6", "--n-r", "6", "--n-h", "4", "--out", "k.csv"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let k = read(dir.path(), "k.csv");
    let rows = body(&k);
    assert_eq!(rows[0], "r,h,value");
    assert_eq!(rows.len(), 1 + 24);
    let side: serde_json::Value = serde_json::from_str(&read(dir.path(), "k.json")).unwrap();
    assert_eq!(side["kind"], "inhomogeneous");
    assert_eq!(side["grid"]["r_values"].as_array().unwrap().len(), 6);
    assert!(side["weighting"].as_str().unwrap().starts_with("model"));
}

#[test]
fn select_r_and_residuals() {
    let dir = tempfile::tempdir().unwrap();
    assert!(kcontrast(dir.path(), &["simulate", "--scenario", "S3", "--seed", "11", "--out", "p.csv"]).status.success());
    let out = kcontrast(
        dir.path(),
        &[
            "select-r", "--pattern", "p.csv", "--model", "exp(alpha+beta*x)", "--seed", "1", "--rule", "oracle", "--truth",
            "2,6", "--r-count", "4", "--n-r", "40", "--restarts", "2", "--out", "trace.csv",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trace = read(dir.path(), "trace.csv");
    let rows = body(&trace);
    assert_eq!(rows[0], "R,criterion,alpha,beta");
    assert_eq!(rows.len(), 5);
    let summary: serde_json::Value = serde_json::from_str(&read(dir.path(), "trace.json")).unwrap();
    let chosen = summary["chosen_R"].as_f64().unwrap();
    let best = rows[1..]
        .iter()
        .map(|r| r.split(',').map(|x| x.parse::<f64>().unwrap()).collect::<Vec<_>>())
        .min_by(|a, b| a[1].total_cmp(&b[1]))
        .unwrap();
    assert_eq!(chosen, best[0]);

    let res = kcontrast(
        dir.path(),
        &["residuals", "--pattern", "p.csv", "--model", "exp(alpha+beta*x)", "--theta", "2,6", "--cells", "16", "--out", "r.csv"],
    );
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let r = read(dir.path(), "r.csv");
    let rows = body(&r);
    assert_eq!(rows[0], "x,y,residual,data,model");
    assert_eq!(rows.len(), 1 + 256);
    for row in &rows[1..] {
        let v: Vec<f64> = row.split(',').map(|x| x.parse().unwrap()).collect();
        assert!((v[2] - (v[3] - v[4])).abs() <= 1e-9 * v[3].abs().max(1.0));
    }
}

#[test]
fn local_fit_summarises_quartiles() {
    let dir = tempfile::tempdir().unwrap();
    let sim = kcontrast(
        dir.path(),
        &["simulate", "--model", "exp(a+b*x)", "--theta", "2,4", "--seed", "3", "--out", "p.csv"],
    );
    assert!(sim.status.success());
    let out = kcontrast(
        dir.path(),
        &["local-fit", "--pattern", "p.csv", "--model", "exp(a+b*x)", "--seed", "2", "--restarts", "1", "--no-se", "--n-r", "30"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let s = &v["summary"][1];
    assert_eq!(s["param"], "b");
    assert!(s["q25"].as_f64().unwrap() <= s["q50"].as_f64().unwrap());
    assert!(s["q50"].as_f64().unwrap() <= s["q75"].as_f64().unwrap());
    assert_eq!(v["result"]["points"].as_array().unwrap().len(), body(&read(dir.path(), "p.csv")).len() - 1);
}

#[test]
fn mc_study_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = kcontrast(dir.path(), &["mc-study", "--scenario", "S2", "--reps", "100", "--seed", "1", "--out", "report"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = dir.path().join("report");
    let summary = std::fs::read_to_string(report.join("summary.csv")).unwrap();
    assert_eq!(body(&summary)[0], "param,true,mean,sqrt_mse,mean_se");
    let raw = std::fs::read_to_string(report.join("raw.csv")).unwrap();
    assert_eq!(body(&raw)[0], "rep,param,true,estimate,se,converged,R_used");
    assert_eq!(body(&raw).len(), 101);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(report.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["summary"][0]["param"], "beta");

    let again = kcontrast(dir.path(), &["mc-study", "--scenario", "S2", "--reps", "100", "--seed", "1", "--out", "again"]);
    assert!(again.status.success());
    assert_eq!(body(&raw), body(&std::fs::read_to_string(dir.path().join("again/raw.csv")).unwrap()));
}
