use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tvcure::data::ingest_csv;
use tvcure::SimScenario;
use tvcure_cli::artifact::FitArtifact;
use tvcure_cli::commands::{BASELINE_FILE, FIT_FILE, PARAMETER_TABLE, REPLICATE_TABLE, TERM_TABLE};

fn tvcure(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tvcure"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn scenario_doc(dir: &Path, n: usize, replicates: usize) -> PathBuf {
    write(
        dir,
        "scenario.toml",
        &format!("schema_version = 1\n[scenario]\nn = {n}\nreplicates = {replicates}\nseed = 7\n"),
    )
}

const SPEC: &str = r#"
schema_version = 1
[model]
quantum_linear = ["z1", "z2"]
quantum_additive = ["x1", "x2"]
timing_linear = ["z3", "z4"]
timing_additive = ["x1", "x3"]
"#;

fn simulate(dir: &Path, n: usize) -> PathBuf {
    let scenario = scenario_doc(dir, n, 1);
    let data = dir.join("data.csv");
    let out = tvcure(&["simulate", "--scenario", s(&scenario), "--out", s(&data)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    data
}

#[test]
fn simulate_is_deterministic_and_seed_sensitive() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = scenario_doc(dir.path(), 50, 1);
    let run = |name: &str, seed: &str| {
        let p = dir.path().join(name);
        let out = tvcure(&["simulate", "--scenario", s(&scenario), "--out", s(&p), "--seed", seed]);
        assert!(out.status.success());
        std::fs::read(p).unwrap()
    };
    let a = run("a.csv", "3");
    let b = run("b.csv", "3");
    let c = run("c.csv", "4");
    assert_eq!(a, b);
    assert_ne!(a, c);
    let header = String::from_utf8_lossy(&a).lines().next().unwrap().to_string();
    assert!(header.starts_with("id,t,d"), "{header}");
}

#[test]
fn fit_writes_artifacts_matching_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 150);
    let spec = write(dir.path(), "spec.toml", SPEC);
    let out_dir = dir.path().join("fit");
    let out = tvcure(&["fit", "--data", s(&data), "--spec", s(&spec), "--out", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    for name in [FIT_FILE, BASELINE_FILE, "term_quantum_x1.csv", "term_timing_x3.csv"] {
        assert!(out_dir.join(name).exists(), "{name} missing");
    }
    let baseline = std::fs::read_to_string(out_dir.join(BASELINE_FILE)).unwrap();
    assert_eq!(baseline.lines().next(), Some("t,f0,F0,S0"));
    let term = std::fs::read_to_string(out_dir.join("term_quantum_x2.csv")).unwrap();
    assert_eq!(term.lines().next(), Some("x,estimate,lower,upper"));
    assert_eq!(term.lines().count(), 102);

    let artifact = FitArtifact::load(&out_dir.join(FIT_FILE)).unwrap();
    let table = ingest_csv(&data, &SimScenario::model_spec()).unwrap();
    let library = tvcure::fit(&table, &SimScenario::model_spec(), &tvcure::FitConfig::default()).unwrap();
    assert_eq!(artifact.result, library);
    for (c, (v, se)) in artifact.coefficients.iter().zip(library.zeta().iter().zip(library.standard_errors())) {
        assert_eq!(c.estimate.to_bits(), v.to_bits(), "{}", c.name);
        assert_eq!(c.std_error.to_bits(), se.to_bits());
    }
    // reloading and re-emitting the artifact is idempotent
    let text = std::fs::read_to_string(out_dir.join(FIT_FILE)).unwrap();
    assert_eq!(artifact.to_json().unwrap(), text);
}

#[test]
fn malformed_csv_exits_with_a_column_message() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "spec.toml", "schema_version = 1\n[model]\nquantum_linear = [\"z\"]\n");
    let data = write(dir.path(), "bad.csv", "id,t,d,z\na,1,0,0.5\na,2,1,oops\n");
    let out = tvcure(&["fit", "--data", s(&data), "--spec", s(&spec), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("column `z`"), "{err}");

    let missing = write(dir.path(), "missing.csv", "id,t,d\na,1,1\n");
    let out = tvcure(&["fit", "--data", s(&missing), "--spec", s(&spec), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`z`"));
}

#[test]
fn bad_documents_exit_with_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "d.csv", "id,t,d\na,1,1\n");
    let spec = write(dir.path(), "spec.toml", "schema_version = 9\n");
    let out = tvcure(&["fit", "--data", s(&data), "--spec", s(&spec), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("schema_version"));

    let scenario = write(dir.path(), "sc.toml", "schema_version = 1\n[scenario]\nn = 0\n");
    let out = tvcure(&["simulate", "--scenario", s(&scenario), "--out", s(&dir.path().join("x.csv"))]);
    assert_eq!(out.status.code(), Some(1));

    let out = tvcure(&["predict", "--fit", s(&dir.path().join("none.json")), "--path", s(&spec), "--out", "p.csv"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn replicate_writes_complete_tables_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = scenario_doc(dir.path(), 120, 2);
    let run = |name: &str, threads: &str| {
        let out_dir = dir.path().join(name);
        let out = tvcure(&["replicate", "--scenario", s(&scenario), "--out", s(&out_dir), "--threads", threads]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        out_dir
    };
    let a = run("a", "1");
    let b = run("b", "2");
    for name in [PARAMETER_TABLE, TERM_TABLE, REPLICATE_TABLE] {
        let x = std::fs::read(a.join(name)).unwrap();
        let y = std::fs::read(b.join(name)).unwrap();
        assert_eq!(x, y, "{name} differs between runs");
    }
    let params = std::fs::read_to_string(a.join(PARAMETER_TABLE)).unwrap();
    let lines: Vec<&str> = params.lines().collect();
    assert_eq!(lines[0], "scenario,n,metric,beta0,beta1,beta2,gamma1,gamma2");
    let metrics: Vec<&str> = lines[1..].iter().map(|l| l.split(',').nth(2).unwrap()).collect();
    assert_eq!(metrics, ["truth", "bias", "rmse", "coverage"]);
    let terms = std::fs::read_to_string(a.join(TERM_TABLE)).unwrap();
    let lines: Vec<&str> = terms.lines().collect();
    assert_eq!(lines[0], "scenario,n,metric,f1,f2,ft1,ft2");
    let metrics: Vec<&str> = lines[1..].iter().map(|l| l.split(',').nth(2).unwrap()).collect();
    assert_eq!(metrics, ["ma_bias", "rmise", "coverage"]);
    assert_eq!(std::fs::read_to_string(a.join(REPLICATE_TABLE)).unwrap().lines().count(), 3);
}

#[test]
fn predict_emits_monotone_survival_and_rejects_unknown_covariates() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 150);
    let spec = write(dir.path(), "spec.toml", SPEC);
    let fit_dir = dir.path().join("fit");
    let out = tvcure(&["fit", "--data", s(&data), "--spec", s(&spec), "--out", s(&fit_dir)]);
    assert_eq!(out.status.code(), Some(0));
    let fit = fit_dir.join(FIT_FILE);

    let months: Vec<String> = (1..=40).map(|t| if t < 20 { "0.2" } else { "0.9" }.to_string()).collect();
    let path = write(
        dir.path(),
        "path.toml",
        &format!(
            "schema_version = 1\n[covariates]\nz1 = 1\nz2 = 0.5\nz3 = 0\nz4 = -1\nx1 = [{}]\nx2 = 0.5\nx3 = 0.3\n",
            months.join(", ")
        ),
    );
    let pred = dir.path().join("pred.csv");
    let out = tvcure(&["predict", "--fit", s(&fit), "--path", s(&path), "--out", s(&pred)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&pred).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,h,H,S,F"));
    let survival: Vec<f64> = lines.map(|l| l.split(',').nth(3).unwrap().parse().unwrap()).collect();
    assert_eq!(survival.len(), 40);
    assert!(survival[0] <= 1.0);
    assert!(survival.windows(2).all(|w| w[1] <= w[0]));

    let unknown = write(
        dir.path(),
        "unknown.toml",
        "schema_version = 1\n[covariates]\nz1 = 1\nz2 = 0\nz3 = 0\nz4 = 0\nx1 = 0.5\nx2 = 0.5\nx3 = 0.5\nincome = 2\n",
    );
    let out = tvcure(&["predict", "--fit", s(&fit), "--path", s(&unknown), "--out", s(&pred)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("income"));
}
