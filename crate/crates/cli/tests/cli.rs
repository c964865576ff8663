use std::path::Path;
use std::process::{Command, Output};

fn fdpcox(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fdpcox")).args(args).current_dir(dir).output().unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn simulate_fit_and_query_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for (server, file) in ["a.csv", "b.csv", "p.csv"].iter().enumerate() {
        let s = server.to_string();
        ok(&fdpcox(&["simulate", "-n", "800", "--seed", "3", "--server", &s, "--out", file], d));
    }
    let text = std::fs::read_to_string(d.join("a.csv")).unwrap();
    assert!(text.starts_with("time,event,z1,z2,z3\n"));
    assert_eq!(text.lines().count(), 801);

    ok(&fdpcox(
        &[
            "fit-beta", "--data", "a.csv", "b.csv", "--algorithm", "fdp", "--epsilon", "2,3", "--out", "fit.json",
            "--transcript", "beta.jsonl",
        ],
        d,
    ));
    let fit: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("fit.json")).unwrap()).unwrap();
    assert_eq!(fit["beta_hat"].as_array().unwrap().len(), 3);
    let rounds = fit["trajectory"].as_array().unwrap().len() - 1;
    let log = std::fs::read_to_string(d.join("beta.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2 * rounds);
    assert!(log.lines().all(|l| l.contains("\"kind\":\"noised_vector\"")));

    ok(&fdpcox(
        &["fit-hazard", "--data", "a.csv", "b.csv", "--beta-fit", "fit.json", "--p-data", "p.csv", "--out", "hazard.csv"],
        d,
    ));
    let hazard = std::fs::read_to_string(d.join("hazard.csv")).unwrap();
    let mut lines = hazard.lines();
    assert_eq!(lines.next(), Some("t,cumulative_hazard,survival"));
    let first: Vec<f64> = lines.next().unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(first, vec![0.0, 0.0, 1.0]);
    assert_eq!(lines.last().unwrap().split(',').next(), Some("1.0"));
}

#[test]
fn central_fit_needs_one_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&fdpcox(&["simulate", "-n", "50", "--out", "a.csv"], d));
    let out = fdpcox(&["fit-beta", "--data", "a.csv", "a.csv", "--algorithm", "cdp"], d);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("exactly one"));
    ok(&fdpcox(&["fit-beta", "--data", "a.csv", "--algorithm", "cdp", "--noise-multiplier", "0"], d));
}

#[test]
fn audit_writes_one_row_per_case_and_size() {
    let dir = tempfile::tempdir().unwrap();
    let out = fdpcox(&["audit-sensitivity", "--n", "5,10", "--trials", "50"], dir.path());
    ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "case,n,bound,max_observed,lower_witness");
    assert_eq!(rows.len(), 9);
    for row in &rows[1..] {
        let f: Vec<&str> = row.split(',').collect();
        let bound: f64 = f[2].parse().unwrap();
        assert!(f[3].parse::<f64>().unwrap() <= bound);
        assert!(f[4].parse::<f64>().unwrap() <= bound);
    }
}

#[test]
fn experiment_rejects_unknown_preset_and_accepts_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = fdpcox(&["experiment", "--preset", "nope", "--out", "x.csv"], d);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("cdp-beta-grid"));
    std::fs::write(
        d.join("s.json"),
        r#"{"name":"tiny","model":{"beta0":[0.3,-0.2],"baseline":{"kind":"constant","rate":1.0},
            "censoring_rate":0.5,"covariate_law":"uniform"},
            "grid":{"n":[300,600],"epsilon":[2.0]},"algorithm":"cdp-cox","estimand":"both",
            "replications":2,"seed":1}"#,
    )
    .unwrap();
    ok(&fdpcox(&["experiment", "--config", "s.json", "--out", "r.csv"], d));
    let text = std::fs::read_to_string(d.join("r.csv")).unwrap();
    assert!(text.starts_with("scenario,n,epsilon,delta,servers,dimension,censoring_rate,noise_constant,step_size,replication,metric,value\n"));
    for metric in ["beta_sq_error", "hazard_sup_error", "survival_sup_error", "p_hat_error"] {
        assert_eq!(text.lines().filter(|l| l.contains(metric)).count(), 4, "{metric}");
    }
}
