use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use conflow_cli::{run_scenario, CheckKind, ConfigError, RunOptions, Scenario, Status};
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_conflow"))
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.toml"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn report(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const HEAT: &str = r#"name = "h"
dimension = 1
[fields]
u = "sin(pi*x)*exp(-t)"
[law]
kind = "heat"
alpha = 0.1
[link]
kind = "identity"
"#;

#[test]
fn shipped_scenarios_pass() {
    for name in ["identity_geometry", "heat_tonti", "poisson_cubic"] {
        let out = run(&["run", scenario(name).to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{name}: {}", String::from_utf8_lossy(&out.stderr));
        assert_eq!(report(&out)["summary"]["status"], "pass");
    }
}

#[test]
fn expected_failures_are_info_with_tonti_pair() {
    let r = report(&run(&["run", scenario("heat_tonti").to_str().unwrap()]));
    let checks = r["checks"].as_array().unwrap();
    assert!(checks.iter().all(|c| c["status"] == "info"));
    assert_eq!(checks[0]["measured"]["residual"], serde_json::json!([1.0, 0.0]));
    assert!(checks[1]["measured"]["defect"].as_f64().unwrap() > 1e-3);
}

#[test]
fn poisson_action_matches_closed_form() {
    let r = report(&run(&["run", scenario("poisson_cubic").to_str().unwrap()]));
    let a = r["checks"][0]["measured"]["action_straight"].as_f64().unwrap();
    assert!((a - (std::f64::consts::PI.powi(2) / 4.0 + 3.0 / 32.0)).abs() < 1e-6);
}

#[test]
fn failing_check_exits_one_and_unexpected_pass_fails() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "a.toml", &format!("{HEAT}[[checks]]\nkind = \"tonti\"\n"));
    let out = run(&["run", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(report(&out)["checks"][0]["status"], "fail");

    let p = write(dir.path(), "b.toml", &format!("{HEAT}[[checks]]\nkind = \"path_independence\"\nexpect = \"fail\"\nfield = \"u\"\n").replace("kind = \"heat\"\nalpha = 0.1", "kind = \"semilinear_poisson\""));
    let out = run(&["run", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let c = &report(&out)["checks"][0];
    assert_eq!(c["status"], "fail");
    assert_eq!(c["note"], "expected failure did not occur");
}

#[test]
fn config_errors_exit_two_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "bad.toml", &format!("{HEAT}[[checks]]\nkind = \"tonti\"\nvariant = \"full\"\n"));
    for cmd in ["run", "validate"] {
        let out = run(&[cmd, p.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(2));
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains("line 10") && err.contains("variant"), "{err}");
    }
    let p = write(dir.path(), "syntax.toml", "name = \"x\"\ndimension = \n");
    let err = String::from_utf8_lossy(&run(&["run", p.to_str().unwrap()]).stderr).to_string();
    assert!(err.contains("line 2"), "{err}");
    assert_eq!(run(&["run", "/nonexistent.toml"]).status.code(), Some(2));
}

#[test]
fn validate_and_list_checks() {
    let out = run(&["validate", scenario("poisson_cubic").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let out = run(&["list-checks"]);
    let text = String::from_utf8(out.stdout).unwrap();
    for k in CheckKind::ALL {
        assert!(text.contains(k.as_str()));
    }
}

#[test]
fn report_and_tables_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let text = HEAT.replace("kind = \"heat\"\nalpha = 0.1", "kind = \"custom\"\nexpr = \"u_tt + u_xx\"")
        + "[output]\ntables = \"tables\"\n[[checks]]\nkind = \"determining_residual\"\n";
    let p = write(dir.path(), "det.toml", &text);
    let out_path = dir.path().join("report.json");
    let out = run(&["run", p.to_str().unwrap(), "--report", out_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stdout.is_empty());
    let r: Value = serde_json::from_str(&std::fs::read_to_string(out_path).unwrap()).unwrap();
    assert_eq!(r["checks"][0]["measured"]["max_r"], 0.0);
    let csv = std::fs::read_to_string(dir.path().join("tables/h_determining_residual_determining.csv")).unwrap();
    assert!(csv.starts_with("s0,s1,r0,r1,fsym_max\n"));
    assert_eq!(csv.lines().count(), 10);
}

#[test]
fn seed_and_quadrature_overrides_are_recorded() {
    let out = run(&["run", scenario("poisson_cubic").to_str().unwrap(), "--seed", "99", "--quad", "12"]);
    let r = report(&out);
    assert_eq!(r["environment"]["seed"], 99);
    assert_eq!(r["environment"]["quadrature_nodes"], serde_json::json!([12, 12]));
}

#[test]
fn library_entry_point_matches_binary() {
    let path = scenario("heat_tonti");
    let source = std::fs::read_to_string(&path).unwrap();
    let s = Scenario::parse(&source).unwrap();
    let r = run_scenario(&s, &source, &RunOptions::default()).unwrap();
    assert!(r.ok());
    assert!(r.checks.iter().all(|c| c.status == Status::Info));
    let bad = Scenario::parse(&source.replace("field = \"zero\"", "field = \"nope\""));
    assert!(matches!(bad, Err(ConfigError::Invalid { .. })));
}
