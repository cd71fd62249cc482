use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn regmin(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_regmin"))
        .args(args)
        .current_dir(cwd)
        .env_remove("REGMIN_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap()
}

fn default_matrix() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("suites/default.toml")
}

#[test]
fn gradient_run_on_diag_quadratic_converges() {
    let dir = TempDir::new().unwrap();
    let out = regmin(
        &[
            "run",
            "--problem",
            "quad-d2",
            "--algorithm",
            "gradient",
            "--alpha",
            "0.25",
            "--out-dir",
            "g",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let summary = json(dir.path().join("g/summary.json"));
    assert_eq!(summary["status"], "converged");
    assert!(summary["iters"].as_u64().unwrap() > 0);
    assert!(summary["gnorm_final"].as_f64().unwrap() <= 1e-7);
    let csv = std::fs::read_to_string(dir.path().join("g/trace.csv")).unwrap();
    assert_eq!(
        csv.lines().next(),
        Some("k,fx,gnorm,sigma,snorm,mgradnorm,mdec,rho,accepted")
    );
    assert_eq!(csv.lines().count() as u64, summary["iters"].as_u64().unwrap() + 1);
}

#[test]
fn alg2_without_lipschitz_constant_is_refused() {
    let dir = TempDir::new().unwrap();
    let out = regmin(&["run", "--problem", "quartic-d3", "--algorithm", "alg2"], dir.path());
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("Condition 2 requires L"), "{}", stderr(&out));
    let explicit = regmin(
        &["run", "--problem", "quartic-d3", "--algorithm", "alg2", "--a", "10"],
        dir.path(),
    );
    assert_eq!(code(&explicit), 2);
    assert!(stderr(&explicit).contains("Condition 2 requires L"));
    // the accept/reject scheme needs no L
    let alg1 = regmin(&["run", "--problem", "quartic-d3", "--out-dir", "q"], dir.path());
    assert_eq!(code(&alg1), 0, "{}", stderr(&alg1));
}

#[test]
fn identical_specs_give_byte_identical_traces() {
    let dir = TempDir::new().unwrap();
    let args = |out: &'static str| {
        vec![
            "run",
            "--problem",
            "lse-d5",
            "--algorithm",
            "alg1",
            "--tau",
            "0.05",
            "--subsolver",
            "descent",
            "--policy",
            "shrink",
            "--a",
            "0.2",
            "--q0-scale",
            "0.4",
            "--start",
            "random",
            "--seed",
            "42",
            "--out-dir",
            out,
        ]
    };
    assert_eq!(code(&regmin(&args("a"), dir.path())), 0);
    assert_eq!(code(&regmin(&args("b"), dir.path())), 0);
    for file in ["trace.csv", "trace.json", "summary.json", "spec.json"] {
        let a = std::fs::read(dir.path().join("a").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(file)).unwrap();
        assert!(a == b, "{file} differs");
    }
}

#[test]
fn flags_override_config_file() {
    let dir = TempDir::new().unwrap();
    std::fs::write(
        dir.path().join("run.toml"),
        "problem = \"quad-d2\"\nalgorithm = \"alg2\"\ntau = 0.2\neta = 0.5\n",
    )
    .unwrap();
    let out = regmin(
        &["run", "--config", "run.toml", "--tau", "0.01", "--out-dir", "c"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let spec = json(dir.path().join("c/spec.json"));
    assert_eq!(spec["config"]["tau"], 0.01);
    assert_eq!(spec["config"]["eta"], 0.5);
    // a = 2 tau + L / (1 - eta) with L = 4
    assert!((spec["a"].as_f64().unwrap() - 8.02).abs() < 1e-12);

    std::fs::write(dir.path().join("bad.toml"), "problem = \"quad-d2\"\nstepsize = 1\n").unwrap();
    assert_eq!(code(&regmin(&["run", "--config", "bad.toml"], dir.path())), 1);
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = TempDir::new().unwrap();
    for args in [
        vec!["run", "--bogus"],
        vec!["run"],
        vec!["run", "--problem", "quad-d2", "--r", "2"],
        vec!["run", "--problem", "nope"],
        vec!["run", "--problem", "quad-d2", "--x0", "1,2,3"],
        vec!["certify", "missing.csv"],
        vec!["frobnicate"],
    ] {
        assert_eq!(code(&regmin(&args, dir.path())), 1, "{args:?}");
    }
    assert_eq!(code(&regmin(&["--help"], dir.path())), 0);
}

#[test]
fn out_dir_defaults_to_environment_variable() {
    let dir = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_regmin"))
        .args(["run", "--problem", "quad-d2"])
        .current_dir(dir.path())
        .env("REGMIN_OUT_DIR", "from-env")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert!(dir.path().join("from-env/trace.csv").exists());
}

#[test]
fn certifying_an_always_accept_run_on_a_convex_problem() {
    let dir = TempDir::new().unwrap();
    let run = regmin(
        &[
            "run",
            "--problem",
            "dquad-d5-k10",
            "--algorithm",
            "alg2",
            "--policy",
            "inflated",
            "--psi0",
            "0.5",
            "--out-dir",
            "r",
        ],
        dir.path(),
    );
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    let out = regmin(&["certify", "r/trace.csv"], dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let summary = json(dir.path().join("r/certificate.json"));
    assert!(summary["min_slack"].as_f64().unwrap() >= -1e-8);
    assert_eq!(summary["passed"], true);
    for key in ["R_hat", "nu_hat", "b_hat", "T_hat", "sums"] {
        assert!(!summary[key].is_null(), "{key}");
    }
    let csv = std::fs::read_to_string(dir.path().join("r/certificate.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("k,psi,theta,eps,lhs,rhs,slack"));
    let iters = json(dir.path().join("r/summary.json"))["iters"].as_u64().unwrap();
    assert_eq!(csv.lines().count() as u64, iters + 1);
}

#[test]
fn reference_point_outside_the_target_set_is_refused() {
    let dir = TempDir::new().unwrap();
    assert_eq!(
        code(&regmin(&["run", "--problem", "quad-d2", "--out-dir", "r"], dir.path())),
        0
    );
    let out = regmin(&["certify", "r/trace.csv", "--y", "3,-3"], dir.path());
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("outside the target set"), "{}", stderr(&out));
    let wrong_dim = regmin(&["certify", "r/trace.csv", "--y", "1,2,3"], dir.path());
    assert_eq!(code(&wrong_dim), 1);
}

#[test]
fn empty_trace_gives_empty_certificate() {
    let dir = TempDir::new().unwrap();
    let run = regmin(
        &["run", "--problem", "quad-d2", "--x0", "0,0", "--out-dir", "e"],
        dir.path(),
    );
    assert_eq!(code(&run), 0);
    assert_eq!(json(dir.path().join("e/summary.json"))["iters"], 0);
    let out = regmin(&["certify", "e/trace.csv"], dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("e/certificate.csv")).unwrap();
    assert_eq!(csv, "k,psi,theta,eps,lhs,rhs,slack\n");
    assert!(json(dir.path().join("e/certificate.json"))["min_slack"].is_null());
}

#[test]
fn tampered_sidecar_is_rejected() {
    let dir = TempDir::new().unwrap();
    assert_eq!(
        code(&regmin(&["run", "--problem", "quad-d2", "--out-dir", "r"], dir.path())),
        0
    );
    let path = dir.path().join("r/trace.json");
    let mut side = json(path.clone());
    side["steps"].as_array_mut().unwrap().pop();
    std::fs::write(&path, serde_json::to_string(&side).unwrap()).unwrap();
    assert_eq!(code(&regmin(&["certify", "r/trace.csv"], dir.path())), 1);
}

#[test]
fn rate_report_on_the_ill_conditioned_quadratic() {
    let dir = TempDir::new().unwrap();
    let run = regmin(
        &[
            "run",
            "--problem",
            "quad-d10-k100",
            "--algorithm",
            "alg2",
            "--tau",
            "0.01",
            "--eta",
            "0.5",
            "--out-dir",
            "r",
        ],
        dir.path(),
    );
    assert_eq!(code(&run), 0);
    let out = regmin(&["rate", "r/trace.csv"], dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = json(dir.path().join("r/rate.json"));
    assert_eq!(report["passed"], true);
    assert!(report["max_excess"].as_f64().unwrap() <= 1e-10);
    // the ratio problem is not convex
    let run = regmin(
        &["run", "--problem", "ratio-d2", "--algorithm", "alg2", "--out-dir", "p"],
        dir.path(),
    );
    assert_eq!(code(&run), 0);
    assert_eq!(code(&regmin(&["rate", "p/trace.csv"], dir.path())), 2);
}

#[test]
fn empty_matrix_gives_empty_report() {
    let dir = TempDir::new().unwrap();
    std::fs::write(dir.path().join("empty.toml"), "# nothing to run\n").unwrap();
    let out = regmin(&["suite", "empty.toml", "--out-dir", "s"], dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = json(dir.path().join("s/suite.json"));
    assert_eq!(report["rows"], 0);
    assert_eq!(report["passed"], true);
    assert_eq!(report["criteria"], serde_json::json!({}));
}

#[test]
fn invalid_row_fails_alone() {
    let dir = TempDir::new().unwrap();
    std::fs::write(
        dir.path().join("m.toml"),
        r#"
[[run]]
name = "good"
problem = "quad-d2"
algorithm = "alg2"
grad_tol = 1e-9

[[run]]
name = "bad"
problem = "quad-d2"
tau = -1.0

[[run]]
name = "typo"
problme = "quad-d2"

[[run]]
name = "also-good"
problem = "lse-d2"
algorithm = "gradient"
grad_tol = 1e-9
"#,
    )
    .unwrap();
    let out = regmin(&["suite", "m.toml", "--out-dir", "s"], dir.path());
    assert_eq!(code(&out), 3);
    let report = json(dir.path().join("s/suite.json"));
    assert_eq!(report["rows"], 4);
    assert_eq!(report["failed_rows"], serde_json::json!(["bad", "typo"]));
    for row in report["runs"].as_array().unwrap() {
        let good = row["name"] == "good" || row["name"] == "also-good";
        assert_eq!(row["ok"], good, "{row}");
        if good {
            assert!(
                row["criteria"]
                    .as_object()
                    .unwrap()
                    .values()
                    .all(|c| c["passed"] == true),
                "{row}"
            );
        }
    }
    assert!(report["criteria"]
        .as_object()
        .unwrap()
        .values()
        .all(|c| c["passed"] == true));
    assert!(dir.path().join("s/good/trace.csv").exists());
}

#[test]
fn shipped_matrix_passes_every_criterion() {
    let dir = TempDir::new().unwrap();
    let matrix = default_matrix();
    let out = regmin(&["suite", matrix.to_str().unwrap(), "--out-dir", "s"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let report = json(dir.path().join("s/suite.json"));
    assert_eq!(report["passed"], true);
    assert_eq!(report["failed_rows"], serde_json::json!([]));
    let criteria = report["criteria"].as_object().unwrap();
    for id in 2..=11 {
        let c = &criteria[&id.to_string()];
        assert_eq!(c["passed"], true, "criterion {id}: {c}");
        assert!(c["runs"].as_u64().unwrap() > 0, "criterion {id} never applied");
    }
}

#[test]
fn problems_list_names_the_catalog() {
    let dir = TempDir::new().unwrap();
    let out = regmin(&["problems", "list"], dir.path());
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    for name in ["quad-d2", "quad-d10-k100", "logistic", "ratio-d5", "quartic-d3"] {
        assert!(text.contains(name), "{name}");
    }
}
