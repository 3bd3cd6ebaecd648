use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn cdoc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cdoc"))
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn column(path: &Path, name: &str) -> Vec<String> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let i = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records().map(|rec| rec.unwrap()[i].to_string()).collect()
}

fn floats(path: &Path, name: &str) -> Vec<f64> {
    column(path, name).iter().map(|s| s.parse().unwrap()).collect()
}

#[test]
fn unweighted_solve_has_no_sensitivity_cost() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("w0");
    let o = cdoc(&[
        "solve",
        "zermelo",
        "--weight",
        "0",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let sol = json(&out.join("solution.json"));
    assert_eq!(sol["costs"]["Js"], sol["costs"]["J"]);
    assert_eq!(sol["costs"]["Jc"].as_f64().unwrap(), 0.0);
    assert_eq!(sol["converged"], Value::Bool(true));
    assert_eq!(sol["provenance"]["grid"]["nodes"].as_u64().unwrap(), 101);
    assert_eq!(sol["provenance"]["config"]["problem"]["name"], "zermelo");
    let mut r = csv::Reader::from_path(out.join("trajectory.csv")).unwrap();
    let header: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, ["t", "x1", "x2", "p1", "lambda1", "lambda2", "mu1", "u1"]);
    assert_eq!(r.records().count(), 101);
    let u = floats(&out.join("trajectory.csv"), "u1");
    assert!(u.iter().all(|v| v.abs() <= std::f64::consts::PI));

    let heavy = dir.path().join("w1e4");
    let o = cdoc(&[
        "solve",
        "zermelo",
        "--weight",
        "10000",
        "--out",
        heavy.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    let peak = |p: &Path| {
        floats(&p.join("trajectory.csv"), "x2")
            .into_iter()
            .fold(f64::MIN, f64::max)
    };
    assert!(peak(&heavy) < peak(&out));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(code(&cdoc(&["solve", "missing/config.toml", "--out", out])), 2);
    assert_eq!(code(&cdoc(&["solve", "mars-landing", "--out", out])), 2);
    assert_eq!(code(&cdoc(&["sweep", "lqr-b", "--weights", "", "--out", out])), 2);
    assert_eq!(
        code(&cdoc(&["sweep", "lqr-b", "--weights", "10,1", "--out", out])),
        2
    );
    assert_eq!(
        code(&cdoc(&["montecarlo", "zermelo", "--samples", "0", "--out", out])),
        2
    );
    assert_eq!(
        code(&cdoc(&[
            "montecarlo",
            "zermelo",
            "--fraction",
            "1.5",
            "--out",
            out
        ])),
        2
    );
    assert_eq!(
        code(&cdoc(&[
            "verify",
            "zermelo",
            "--suite",
            "everything",
            "--out",
            out
        ])),
        2
    );
    assert_eq!(code(&cdoc(&["solve", "zermelo", "--grid", "1", "--out", out])), 2);
    assert_eq!(
        code(&cdoc(&["solve", "zermelo", "--weight", "-1", "--out", out])),
        2
    );
    assert_eq!(code(&cdoc(&["frobnicate"])), 2);
    assert!(std::fs::read_dir(dir.path()).unwrap().next().is_none());
}

#[test]
fn non_convergence_exits_with_three_and_still_writes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("short.toml");
    std::fs::write(
        &cfg,
        "[problem]\nname = \"zermelo\"\n\n[solver]\nmax_outer = 1\nmax_inner = 3\n",
    )
    .unwrap();
    let out = dir.path().join("o");
    let o = cdoc(&["solve", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    let sol = json(&out.join("solution.json"));
    assert_eq!(sol["converged"], Value::Bool(false));
    assert_eq!(
        sol["provenance"]["config"]["solver"]["max_outer"]
            .as_u64()
            .unwrap(),
        1
    );
}

#[test]
fn regulator_sweep_and_config_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let o = cdoc(&[
        "sweep",
        "lqr-b",
        "--weights",
        "0,1000",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let tradeoff = out.join("tradeoff.csv");
    assert_eq!(floats(&tradeoff, "weight"), vec![0.0, 1000.0]);
    assert_eq!(column(&tradeoff, "converged"), vec!["true", "true"]);
    let j = floats(&tradeoff, "J");
    let s = floats(&tradeoff, "sensitivity");
    assert!(j[1] >= j[0] && s[1] <= s[0]);
    assert!(out.join("trajectory_w0.csv").exists() && out.join("trajectory_w1000.csv").exists());
    assert_eq!(json(&out.join("sweep.json"))["ordered"], Value::Bool(true));

    // a steeper decay through a JSON config
    let cfg = dir.path().join("fast.json");
    std::fs::write(
        &cfg,
        r#"{"problem": {"name": "lqr-a-stable", "a": -3.0, "tf": 5.0}, "weight": 0.0, "solver": {"nodes": 51}}"#,
    )
    .unwrap();
    let out = dir.path().join("fast");
    let o = cdoc(&["solve", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let sol = json(&out.join("solution.json"));
    assert_eq!(sol["nominal_params"][0].as_f64().unwrap(), -3.0);
    let t = floats(&out.join("trajectory.csv"), "t");
    assert_eq!((t.len(), *t.last().unwrap()), (51, 5.0));
    // scalar Riccati steady state for a = -3, b = 1, R1 = R2 = 2: P = 2 (sqrt(10) - 3)
    let j = sol["costs"]["J"].as_f64().unwrap();
    assert!((j - (10f64.sqrt() - 3.0)).abs() < 1e-3, "{j}");
}

#[test]
fn montecarlo_protocol_and_repeatability() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = cdoc(&[
            "montecarlo",
            "zermelo",
            "--samples",
            "100",
            "--fraction",
            "0.1",
            "--seed",
            "11",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let (a, b) = (run("a"), run("b"));
    let p = floats(&a.join("mc_samples.csv"), "p1");
    assert_eq!(p.len(), 100);
    assert!(p.iter().all(|v| (9.0..=11.0).contains(v)));
    assert!(column(&a.join("mc_samples.csv"), "diverged")
        .iter()
        .all(|d| d == "false"));
    let summary = json(&a.join("mc_summary.json"));
    assert_eq!(summary["seed"].as_u64().unwrap(), 11);
    assert_eq!(summary["excluded"].as_u64().unwrap(), 0);
    assert_eq!(summary["cost"]["count"].as_u64().unwrap(), 100);
    for f in ["mc_samples.csv", "mc_trajectories.csv", "mc_summary.json"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn unstable_regime_bookkeeping() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = cdoc(&[
        "montecarlo",
        "lqr-a-unstable",
        "--samples",
        "30",
        "--seed",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary = json(&out.join("mc_summary.json"));
    let flagged = column(&out.join("mc_samples.csv"), "diverged")
        .iter()
        .filter(|d| *d == "true")
        .count();
    assert_eq!(summary["excluded"].as_u64().unwrap() as usize, flagged);
    assert_eq!(summary["failures"].as_array().unwrap().len(), flagged);
    assert_eq!(summary["fraction"].as_f64().unwrap(), 0.2);
    let p = floats(&out.join("mc_samples.csv"), "p1");
    assert!(p.iter().all(|v| (0.08..=0.12).contains(v)));
}

#[test]
fn verification_suites() {
    let dir = tempfile::tempdir().unwrap();
    for (problem, suite) in [("zermelo", "theorem1"), ("lqr-a-stable", "stm")] {
        let out = dir.path().join(problem);
        let o = cdoc(&[
            "verify",
            problem,
            "--suite",
            suite,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let v = json(&out.join("verify.json"));
        assert_eq!(v["passed"], Value::Bool(true));
        assert_eq!(v["suite"], suite);
        assert_eq!(v["provenance"]["grid"]["nodes"].as_u64().unwrap(), 1001);
    }
}
