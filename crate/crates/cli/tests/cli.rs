use std::path::PathBuf;
use std::process::{Command, Output};

fn pam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pam")).args(args).output().expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("pam-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stdout is json")
}

#[test]
fn verify_suite_passes() {
    let out = pam(&["verify"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert!(v["checks"].as_array().unwrap().iter().all(|c| c["ok"] == true));
}

#[test]
fn bad_parameter_is_a_config_error() {
    assert_eq!(pam(&["gen-field", "--law", "nonsense"]).status.code(), Some(2));
    assert_eq!(pam(&["moment", "--p", "0"]).status.code(), Some(2));
}

#[test]
fn oversized_operator_is_a_budget_error() {
    let out = pam(&["variational", "--dim", "2", "--radius", "10", "--p", "3", "--max-dim", "1000"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("budget"));
}

#[test]
fn missing_pocket_exits_four() {
    let out = pam(&[
        "verify-cluster", "--law", "iid", "--values", "0.5,2", "--probs", "0.5,0.5", "--kappa", "1", "--radius", "10",
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(json(&out)["found"], false);
    let hit = pam(&["verify-cluster", "--kappa", "1", "--radius", "10"]);
    assert!(hit.status.success());
}

#[test]
fn config_file_is_overridden_by_flags() {
    let cfg = scratch("green.toml");
    std::fs::write(&cfg, "dim = 3\nradius = 6\n").unwrap();
    let from_file = json(&pam(&["--config", cfg.to_str().unwrap(), "green"]));
    assert_eq!(from_file["config"]["params"]["radius"], 6);
    let flagged = json(&pam(&["--config", cfg.to_str().unwrap(), "green", "--radius", "8"]));
    assert_eq!(flagged["config"]["params"]["radius"], 8);
    assert_eq!(flagged["config"]["params"]["dim"], 3);
    assert!(flagged["g0"].as_f64().unwrap() > from_file["g0"].as_f64().unwrap());
}

#[test]
fn unknown_config_key_is_rejected() {
    let cfg = scratch("bad.toml");
    std::fs::write(&cfg, "radius = 4\ncolour = \"red\"\n").unwrap();
    let out = pam(&["--config", cfg.to_str().unwrap(), "green"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
}

#[test]
fn missing_config_file_is_an_io_error() {
    assert_eq!(pam(&["--config", "/nonexistent/pam.toml", "green"]).status.code(), Some(2));
}

#[test]
fn generated_field_round_trips_through_csv() {
    let path = scratch("field.csv");
    let out = pam(&[
        "gen-field", "--law", "iid", "--values", "0.5,2", "--probs", "0.5,0.5", "--radius", "20", "--seed", "4",
        "--out", path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("# {"));
    let a = pam(&["moment", "--field", path.to_str().unwrap(), "--seed", "4", "--t-grid", "1,2", "--replicas", "2000"]);
    let b = pam(&[
        "moment", "--law", "iid", "--values", "0.5,2", "--probs", "0.5,0.5", "--radius", "20", "--seed", "4",
        "--t-grid", "1,2", "--replicas", "2000",
    ]);
    assert!(a.status.success() && b.status.success());
    assert_eq!(json(&a)["moments"], json(&b)["moments"]);
}

#[test]
fn variational_json_and_export() {
    let coo = scratch("op.coo");
    let out = pam(&["variational", "--radius", "3", "--export", coo.to_str().unwrap()]);
    assert!(out.status.success());
    let v = json(&out);
    assert_eq!(v["dim"], 49);
    assert!(v["eigen"]["converged"].as_bool().unwrap());
    let text = std::fs::read_to_string(&coo).unwrap();
    assert_eq!(text.lines().count() - 1, v["nnz"].as_u64().unwrap() as usize);
}

#[test]
fn sweep_writes_csv() {
    let out = pam(&["variational", "--sweep", "--radius", "4"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# "));
    assert_eq!(lines.next(), Some("kappa,lambda_p,residual"));
    assert_eq!(lines.count(), 5);
}

#[test]
fn moment_csv_carries_seeds() {
    let csv = scratch("moment.csv");
    let out = pam(&["moment", "--t-grid", "1", "--replicas", "500", "--seed", "9", "--csv", csv.to_str().unwrap()]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.lines().nth(1).unwrap().contains("seed"));
}

#[test]
fn out_flag_writes_file() {
    let path = scratch("green.json");
    let out = pam(&["green", "--dim", "1", "--out", path.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(v["divergent"], true);
}
