use std::path::Path;
use std::process::{Command, Output};

use gradcritic::{FiniteMdp, Policy};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gradcritic")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn oracle_on_imani_prints_gradients() {
    let out = cli(&["oracle"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    assert_eq!(v["grad_j"].as_array().unwrap().len(), 8);
    let rows = v["gamma_matrix"].as_array().unwrap();
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().all(|r| r.as_array().unwrap().len() == 8));
    assert!(v["j"].as_f64().is_some());
}

#[test]
fn estimate_reports_estimator_and_seed() {
    let out = cli(&["estimate", "--estimator", "start_state", "--dataset-size", "100", "--seed", "3"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    assert_eq!(v["estimator_id"], "start_state");
    assert_eq!(v["seed"], 3);
    assert_eq!(cli(&["estimate", "--estimator", "start_state", "--dataset-size", "100", "--seed", "3"]).stdout, out.stdout);
}

#[test]
fn unknown_estimator_exits_with_config_code() {
    let out = cli(&["estimate", "--estimator", "nope"]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("lstd_gamma") && err.contains("pathwise_is"), "{err}");
}

#[test]
fn malformed_config_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"protocol": "bias_variance"}"#).unwrap();
    assert_eq!(code(&cli(&["run", path.to_str().unwrap()])), 2);
    assert_eq!(code(&cli(&["--config", path.to_str().unwrap()])), 2);
}

#[test]
fn zero_support_behavior_exits_with_numerical_code() {
    let dir = tempfile::tempdir().unwrap();
    let mdp_path = dir.path().join("mdp.json");
    let cli_out = cli(&["gen-mdp", "--states", "3", "--out", mdp_path.to_str().unwrap()]);
    assert_eq!(code(&cli_out), 0);
    let mdp = FiniteMdp::load(&mdp_path).unwrap();
    assert_eq!(mdp.n_states, 3);
    let pol = dir.path().join("pol.json");
    let beh = dir.path().join("beh.json");
    Policy::tabular_uniform(3, 2).save(&pol).unwrap();
    Policy::tabular(3, 2, vec![0.0, -1e4, 0.0, -1e4, 0.0, -1e4]).unwrap().save(&beh).unwrap();
    let args = |b: &Path| {
        cli(&[
            "bounds",
            "--mdp",
            mdp_path.to_str().unwrap(),
            "--policy",
            pol.to_str().unwrap(),
            "--behavior",
            b.to_str().unwrap(),
        ])
    };
    assert_eq!(code(&args(&pol)), 0);
    assert_eq!(code(&args(&beh)), 3);
}

#[test]
fn strict_divergence_exits_with_divergence_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c.csv");
    let base = [
        "train-tdrc", "--lambdas", "0.5", "--seeds", "1", "--steps", "200", "--eval-every", "50",
        "--actor-lr", "1e12", "--alpha", "0.5", "--out", out.to_str().unwrap(),
    ];
    assert_eq!(code(&cli(&base)), 0);
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.lines().any(|l| l.ends_with(",1")), "{text}");
    let mut strict = base.to_vec();
    strict.push("--strict");
    assert_eq!(code(&cli(&strict)), 4);
}

#[test]
fn bias_variance_then_plot() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bv.csv");
    let raw = dir.path().join("raw.csv");
    let out = cli(&[
        "bias-variance", "--estimator", "lstd_gamma", "--dataset-size", "50", "--lambdas", "0,1",
        "--n-inner", "3", "--n-outer", "2", "--dump-raw", raw.to_str().unwrap(), "--out", csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 5);
    assert!(raw.exists());
    let svg = dir.path().join("bv.svg");
    assert_eq!(code(&cli(&["plot", "--input", csv.to_str().unwrap(), "--out", svg.to_str().unwrap()])), 0);
    assert!(svg.exists());
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    let bad_svg = dir.path().join("bad.svg");
    assert_ne!(code(&cli(&["plot", "--input", empty.to_str().unwrap(), "--out", bad_svg.to_str().unwrap()])), 0);
    assert!(!bad_svg.exists());
}

#[test]
fn train_lstd_writes_curves() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("l.csv");
    let out = cli(&[
        "train-lstd", "--lambdas", "0,1", "--seeds", "2", "--iters", "3", "--dataset-size", "50",
        "--variant", "full-critic", "--out", csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 2 * 4);
    assert!(text.contains("full_critic"));
}

#[test]
fn threads_env_var_is_accepted() {
    let out = Command::new(env!("CARGO_BIN_EXE_gradcritic"))
        .env("GRADCRITIC_THREADS", "1")
        .args(["oracle", "--env", "random", "--index", "2"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}
