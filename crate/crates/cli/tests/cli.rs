use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn sviph(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sviph"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn read_json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn write(dir: &Path, name: &str, v: &Value) {
    std::fs::write(dir.join(name), v.to_string()).unwrap();
}

/// Two scenarios, `n1 = n2 = 1`, strongly monotone.
fn tiny() -> Value {
    serde_json::json!({
        "n1": 1, "n2": 1,
        "scenarios": [
            {"p": 0.5, "M": [[2.0, 0.5], [0.5, 1.0]], "q": [-1.0, -1.0]},
            {"p": 0.5, "M": [[1.0, -0.5], [-0.5, 2.0]], "q": [-2.0, 0.5]}
        ]
    })
}

#[test]
fn orange_market_solves_and_truncates() {
    let dir = TempDir::new().unwrap();
    ok(&sviph(&["generate", "--orange", "--out", "orange.json"], dir.path()));
    let line = ok(&sviph(&["solve", "orange.json", "--r", "0.01"], dir.path()));
    assert!(line.starts_with("Converged "), "{line}");
    let rep = read_json(dir.path().join("orange.json.report.json"));
    let qs = rep["x1"][0].as_f64().unwrap();
    assert!((392.0..=394.0).contains(&qs), "Q_S = {qs}");
    assert_eq!(rep["x2"].as_object().unwrap().len(), 3);

    let out = sviph(&["solve", "orange.json", "--r", "1", "--max-iter", "1"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("MaxIters 1 "));
}

#[test]
fn tiny_instance_matches_oracle_and_verifies() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "tiny.json", &tiny());
    let line = ok(&sviph(&["solve", "tiny.json", "--r", "1", "--tol", "1e-5", "--history", "h.csv"], dir.path()));
    assert!(line.starts_with("Converged"));
    let rep = read_json(dir.path().join("tiny.json.report.json"));
    let oracle: Value = serde_json::from_str(&ok(&sviph(&["oracle", "tiny.json"], dir.path()))).unwrap();
    let sols = oracle.as_array().unwrap();
    assert_eq!(sols.len(), 1);
    let d = (rep["x1"][0].as_f64().unwrap() - sols[0]["x1"][0].as_f64().unwrap()).abs();
    assert!(d <= 1e-3, "first stage differs by {d}");
    let history = std::fs::read_to_string(dir.path().join("h.csv")).unwrap();
    assert!(history.starts_with("iteration,err,rs_norm\n1,"));

    let v: Value = serde_json::from_str(&ok(&sviph(&["verify", "tiny.json", "tiny.json.report.json"], dir.path()))).unwrap();
    assert!(v["err"].as_f64().unwrap() <= 1e-5);

    // oracle solution as a report file
    let mut exact = rep.clone();
    exact["x1"] = sols[0]["x1"].clone();
    exact["x2"] = sols[0]["x2"].clone();
    write(dir.path(), "exact.json", &exact);
    let v: Value = serde_json::from_str(&ok(&sviph(&["verify", "tiny.json", "exact.json"], dir.path()))).unwrap();
    assert!(v["err"].as_f64().unwrap() <= 1e-8);

    let mut bumped = exact.clone();
    bumped["x1"][0] = Value::from(sols[0]["x1"][0].as_f64().unwrap() + 0.1);
    write(dir.path(), "bumped.json", &bumped);
    let v: Value = serde_json::from_str(&ok(&sviph(&["verify", "tiny.json", "bumped.json"], dir.path()))).unwrap();
    assert!(v["err"].as_f64().unwrap() > 1e-3);
    let out = sviph(&["verify", "tiny.json", "bumped.json", "--tol", "1e-5"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn zero_policy_on_nonnegative_q_verifies_exactly() {
    let dir = TempDir::new().unwrap();
    let mut inst = tiny();
    inst["scenarios"][0]["q"] = serde_json::json!([1.0, 0.0]);
    inst["scenarios"][1]["q"] = serde_json::json!([0.5, 2.0]);
    write(dir.path(), "pos.json", &inst);
    let zero = serde_json::json!({
        "status": "Converged", "iterations": 0, "final_error": 0.0, "wall_time_s": 0.0,
        "x1": [0.0], "x2": {"0": [0.0], "1": [0.0]}, "w": {"0": [0.0, 0.0], "1": [0.0, 0.0]}
    });
    write(dir.path(), "zero.json", &zero);
    let v: Value = serde_json::from_str(&ok(&sviph(&["verify", "pos.json", "zero.json"], dir.path()))).unwrap();
    assert_eq!(v["err"].as_f64().unwrap(), 0.0);
}

#[test]
fn generate_shapes_and_determinism() {
    let dir = TempDir::new().unwrap();
    let args = ["generate", "--n1", "40", "--n2", "20", "--sn", "50", "--seed", "7", "--out"];
    ok(&sviph(&[&args[..], &["a.json"]].concat(), dir.path()));
    ok(&sviph(&[&args[..], &["b.json"]].concat(), dir.path()));
    let a = std::fs::read(dir.path().join("a.json")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.json")).unwrap());
    let inst: Value = serde_json::from_slice(&a).unwrap();
    let sc = inst["scenarios"].as_array().unwrap();
    assert_eq!(sc.len(), 50);
    assert_eq!(sc[0]["M"].as_array().unwrap().len(), 60);
    assert_eq!(sc[0]["M"][0].as_array().unwrap().len(), 60);

    let single: Value =
        serde_json::from_str(&ok(&sviph(&["generate", "--n1", "3", "--n2", "2", "--sn", "1"], dir.path()))).unwrap();
    assert_eq!(single["scenarios"].as_array().unwrap().len(), 1);
    let m: Vec<Vec<f64>> = serde_json::from_value(single["scenarios"][0]["M"].clone()).unwrap();
    let rank = numeric_rank(&m);
    assert!(rank <= 2, "rank {rank}");
}

/// Numerical rank by Gaussian elimination with partial pivoting.
fn numeric_rank(m: &[Vec<f64>]) -> usize {
    let mut a: Vec<Vec<f64>> = m.to_vec();
    let (rows, cols) = (a.len(), a[0].len());
    let mut rank = 0;
    for c in 0..cols {
        let Some(p) = (rank..rows).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())) else { break };
        if a[p][c].abs() < 1e-10 {
            continue;
        }
        a.swap(rank, p);
        for i in rank + 1..rows {
            let f = a[i][c] / a[rank][c];
            for k in c..cols {
                a[i][k] -= f * a[rank][k];
            }
        }
        rank += 1;
    }
    rank
}

#[test]
fn elicit_reports_textbook_bounds() {
    let dir = TempDir::new().unwrap();
    ok(&sviph(&["generate", "--example", "saddle_split", "--out", "s.json"], dir.path()));
    ok(&sviph(&["generate", "--example", "negative_curvature", "--out", "n.json"], dir.path()));
    let s: Value = serde_json::from_str(&ok(&sviph(&["elicit", "s.json", "--criterion", "T5"], dir.path()))).unwrap();
    let r = &s["reports"][0];
    assert_eq!(r["criterion"], "T5");
    assert_eq!(r["strictness"], "strict");
    assert!((r["level_bound"].as_f64().unwrap() - 1.0).abs() <= 1e-8);
    let n: Value = serde_json::from_str(&ok(&sviph(&["elicit", "n.json"], dir.path()))).unwrap();
    let t6 = n["reports"].as_array().unwrap().iter().find(|r| r["criterion"] == "T6").unwrap();
    assert!((t6["level_bound"].as_f64().unwrap() - 1.0).abs() <= 1e-8);

    ok(&sviph(&["generate", "--n1", "2", "--n2", "2", "--sn", "3", "--monotone-only", "--out", "m.json"], dir.path()));
    let m: Value =
        serde_json::from_str(&ok(&sviph(&["elicit", "m.json", "--criterion", "T5", "--falsify", "200"], dir.path())))
            .unwrap();
    assert_eq!(m["reports"][0]["applicable"], true);
    assert!(m["reports"][0]["level_bound"].as_f64().unwrap() >= 0.0);
    assert_eq!(m["violations"].as_array().unwrap().len(), 0);

    let csv = ok(&sviph(&["elicit", "s.json", "--format", "csv", "--e2", "1", "--e3", "2"], dir.path()));
    assert!(csv.starts_with("criterion,applicable,level_bound,strictness,grid_certified,reason\nT5,true,"));
    assert_eq!(csv.lines().count(), 8);
}

#[test]
fn bench_writes_csv() {
    let dir = TempDir::new().unwrap();
    let out = ok(&sviph(
        &["bench", "--cells", "3x2x1,2x2x3", "--seeds", "2", "--monotone-only", "--threads", "1"],
        dir.path(),
    ));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "dim,sn,r,avg_iter,avg_time_s,converged_frac");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("3x2,1,1.000000,"));
    assert!(lines[1].ends_with(",1.000"), "{}", lines[1]);
}

#[test]
fn error_exit_codes() {
    let dir = TempDir::new().unwrap();
    std::fs::write(dir.path().join("bad.json"), "{ not json").unwrap();
    assert_eq!(sviph(&["solve", "bad.json"], dir.path()).status.code(), Some(2));
    assert_eq!(sviph(&["solve", "missing.json"], dir.path()).status.code(), Some(2));
    assert_eq!(sviph(&["solve"], dir.path()).status.code(), Some(2));
    // the rank-two first scenario has no feasible point, so its subproblem fails
    ok(&sviph(&["generate", "--n1", "3", "--n2", "2", "--sn", "2", "--out", "g.json"], dir.path()));
    let out = sviph(&["solve", "g.json"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("InnerFailure"));
}

#[test]
fn single_threaded_runs_repeat() {
    let dir = TempDir::new().unwrap();
    ok(&sviph(&["generate", "--n1", "3", "--n2", "2", "--sn", "4", "--monotone-only", "--seed", "3", "--out", "m.json"], dir.path()));
    let run = |name: &str| {
        sviph(&["--threads", "1", "solve", "m.json", "--out", name], dir.path());
        let mut v = read_json(dir.path().join(name));
        v["wall_time_s"] = Value::Null;
        v.to_string()
    };
    assert_eq!(run("a.json"), run("b.json"));
}
