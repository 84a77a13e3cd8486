use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sse_core::equilibrium::{DynamicsTrace, EquilibriumResult};
use sse_core::{ActionTimeDistribution, Boundaries};
use tempfile::TempDir;

fn run(dir: &Path, name: &str, config: &str, extra: &[&str]) -> (Output, PathBuf) {
    let cfg = dir.join(format!("{name}.json"));
    fs::write(&cfg, config).unwrap();
    let out = dir.join(format!("out_{name}"));
    let mut args = vec!["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = Command::new(env!("CARGO_BIN_EXE_sse")).args(&args).env_remove("SSE_OUT_DIR").output().unwrap();
    (o, out)
}

fn summary(o: &Output) -> Value {
    let text = String::from_utf8(o.stdout.clone()).unwrap();
    assert_eq!(text.lines().count(), 1, "{text}");
    serde_json::from_str(text.trim()).unwrap()
}

const SOLVE: &str = r#"{"game":{"type":"matching_pennies","delta":1,"gamma":1},"costs":[0.05,0.05],
  "task":{"command":"solve"}}"#;

#[test]
fn solve_symmetric_pennies() {
    let dir = TempDir::new().unwrap();
    let (o, out) = run(dir.path(), "solve", SOLVE, &[]);
    assert_eq!(o.status.code(), Some(0));
    let s = summary(&o);
    assert_eq!(s["schema_version"], 1);
    assert_eq!(s["command"], "solve");
    assert_eq!(s["status"], "ok");
    let r: EquilibriumResult = serde_json::from_str(&fs::read_to_string(out.join("equilibrium.json")).unwrap()).unwrap();
    for d in &r.sigma.dist {
        assert!((d[0] - 0.5).abs() < 1e-8 && (d[1] - 0.5).abs() < 1e-8, "{d:?}");
    }
    for f in ["action_time_p0.csv", "action_time_p1.csv", "stopping_beliefs_p0.csv", "config.json", "game.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn malformed_tensor_writes_nothing() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"{"game":{"type":"tensor","players":["A","B"],"actions":{"A":["x","y"],"B":["l","r"]},
      "payoffs":{"A":[[1,2],[3]],"B":[[1,2],[3,4]]}},"costs":[0.05,0.05],"task":{"command":"solve"}}"#;
    let (o, out) = run(dir.path(), "bad", cfg, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(summary(&o)["path"], "game.payoffs.A[1]");
    assert!(!out.exists());
}

#[test]
fn schema_errors_point_at_path() {
    let dir = TempDir::new().unwrap();
    let cases = [
        (r#"{"game":{"type":"matching_pennies","delta":1,"gamma":1},"costs":[0.05,0.05],"task":{"command":"solve","bogus":1}}"#, "task"),
        (r#"{"game":{"type":"matching_pennies","delta":1,"gamma":1},"costs":[0.05],"task":{"command":"solve"}}"#, "costs"),
        (
            r#"{"game":{"type":"matching_pennies","delta":1,"gamma":1},"costs":[0.05,0.05],"task":{"command":"sweep-costs","grid":[0.01,0.02]}}"#,
            "task.grid[1]",
        ),
        (r#"{"game":{"type":"matching_pennies","delta":1,"gamma":1},"costs":[0.05,0.05],"task":{"command":"boundaries","player":2}}"#, "task.player"),
        (r#"{"schema_version":7,"game":{"type":"corpus","name":"dominance_two_step"},"costs":[0.05,0.05],"task":{"command":"solve"}}"#, "schema_version"),
    ];
    for (k, (cfg, path)) in cases.iter().enumerate() {
        let (o, out) = run(dir.path(), &format!("c{k}"), cfg, &[]);
        assert_eq!(o.status.code(), Some(2), "{cfg}");
        assert_eq!(summary(&o)["path"], *path, "{cfg}");
        assert!(!out.exists());
    }
}

#[test]
fn boundaries_file_is_monotone() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"{"game":{"type":"matching_pennies","delta":1,"gamma":1},"costs":[0.02,0.02],
      "task":{"command":"boundaries","player":1}}"#;
    let (o, out) = run(dir.path(), "b", cfg, &[]);
    assert_eq!(o.status.code(), Some(0));
    let text = fs::read_to_string(out.join("boundaries.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,lower,upper"));
    let rows: Vec<(f64, f64)> = lines
        .map(|l| {
            let f: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
            (f[1], f[2])
        })
        .collect();
    assert!(rows.len() > 5);
    for w in rows.windows(2) {
        assert!(w[1].0 >= w[0].0 && w[1].1 <= w[0].1, "{w:?}");
    }
    for &(lo, up) in &rows {
        assert!(lo <= 0.5 && up >= 0.5);
    }
    let last = rows.last().unwrap();
    assert!((last.0 - 0.5).abs() < 1e-12 && (last.1 - 0.5).abs() < 1e-12);
    let b: Boundaries = serde_json::from_str(&fs::read_to_string(out.join("boundaries.json")).unwrap()).unwrap();
    assert_eq!(b.upper.len(), rows.len());
}

fn dir_contents(p: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(p)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn seeded_dynamics_are_deterministic_and_seed_flag_overrides() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"{"game":{"type":"matching_pennies","delta":2,"gamma":1},"costs":[0.05,0.05],
      "task":{"command":"dynamics","variant":{"type":"finite_population","n":25,"seed":5},"steps":100,
      "start":[[0.7,0.3],[0.4,0.6]]}}"#;
    let (a, out_a) = run(dir.path(), "a", cfg, &["--threads", "2"]);
    let (b, out_b) = run(dir.path(), "b", cfg, &[]);
    let (c, out_c) = run(dir.path(), "c", cfg, &["--seed", "6"]);
    assert!(a.status.success() && b.status.success() && c.status.success());
    let trace = |p: &Path| fs::read(p.join("trace.csv")).unwrap();
    assert_eq!(trace(&out_a), trace(&out_b));
    assert_ne!(trace(&out_a), trace(&out_c));
    let t: DynamicsTrace = serde_json::from_slice(&fs::read(out_c.join("trace.json")).unwrap()).unwrap();
    assert_eq!(t.seed, Some(6));
}

#[test]
fn emitted_json_reingests() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"{"game":{"type":"matching_pennies","delta":4,"gamma":1},"costs":[0.05,0.05],
      "priors":[{"type":"dirichlet","alpha":[1,1]},{"type":"dirichlet","alpha":[2,1]}],
      "task":{"command":"solve","method":"damped"}}"#;
    let (o, out) = run(dir.path(), "first", cfg, &[]);
    assert!(o.status.success());

    // The echoed config runs to identical artifacts.
    let echoed = fs::read_to_string(out.join("config.json")).unwrap();
    let (o2, out2) = run(dir.path(), "second", &echoed, &[]);
    assert!(o2.status.success());
    assert_eq!(dir_contents(&out), dir_contents(&out2));

    // So does a config built from the canonical game echo.
    let mut v: Value = serde_json::from_str(&echoed).unwrap();
    v["game"] = serde_json::from_str(&fs::read_to_string(out.join("game.json")).unwrap()).unwrap();
    let (o3, out3) = run(dir.path(), "third", &v.to_string(), &[]);
    assert!(o3.status.success());
    let eq = |p: &Path| fs::read(p.join("equilibrium.json")).unwrap();
    assert_eq!(eq(&out), eq(&out3));

    // Results parse back into library types and re-serialize without loss.
    let text = fs::read_to_string(out.join("equilibrium.json")).unwrap();
    let r: EquilibriumResult = serde_json::from_str(&text).unwrap();
    assert_eq!(serde_json::to_string_pretty(&r).unwrap() + "\n", text);
}

#[test]
fn stopping_policy_export() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"{"game":{"type":"matching_pennies","delta":1,"gamma":1},"costs":[0.05,0.05],
      "task":{"command":"stopping","player":1,"sigma":[0.5,0.5]}}"#;
    let (o, out) = run(dir.path(), "s", cfg, &[]);
    assert!(o.status.success());
    let s = summary(&o);
    assert_eq!(s["horizon"], 9);
    let text = fs::read_to_string(out.join("policy.csv")).unwrap();
    assert!(text.starts_with("depth,counts,decision,value,stop_value\n"));
    // Depths 0..=9 with t + 1 nodes each.
    assert_eq!(text.lines().count() - 1, (1..=10).sum::<usize>());
    let d: ActionTimeDistribution = serde_json::from_slice(&fs::read(out.join("action_time.json")).unwrap()).unwrap();
    assert!((d.total() - 1.0).abs() < 1e-12);
}

#[test]
fn failures_exit_one() {
    let dir = TempDir::new().unwrap();
    // A residual target the run cannot reach in three steps.
    let cfg = r#"{"game":{"type":"matching_pennies","delta":1,"gamma":1},"costs":[0.05,0.05],
      "task":{"command":"dynamics","variant":{"type":"cesaro"},"steps":3,"start":[[0.9,0.1],[0.2,0.8]],"stop_tol":1e-9}}"#;
    let (o, _) = run(dir.path(), "slow", cfg, &[]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(summary(&o)["status"], "failed");

    // The mixed equilibrium of a coordination game is unstable.
    let cfg = r#"{"game":{"type":"bimatrix","row":[[1,0],[0,1]],"col":[[1,0],[0,1]]},"costs":[0.02,0.02],
      "task":{"command":"check","suite":{"name":"stability"}}}"#;
    let (o, out) = run(dir.path(), "coord", cfg, &[]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stdout));
    let s = summary(&o);
    assert_eq!(s["pass"], false);
    assert!(s["product"].as_f64().unwrap() > 0.0);
    assert!(out.join("stability.json").exists());
}

#[test]
fn check_suites_pass_on_clasher() {
    let dir = TempDir::new().unwrap();
    let suites = [
        r#"{"name":"horizon","player":1}"#,
        r#"{"name":"never_indifferent","player":1}"#,
        r#"{"name":"myopic_containment","player":0}"#,
        r#"{"name":"tail_bound","player":1}"#,
        r#"{"name":"stability"}"#,
        r#"{"name":"time_revealed","player":1,"sigmas":[0.3,0.5,0.7]}"#,
        r#"{"name":"statics_sigma","player":1,"sigma_grid":[0,0.25,0.5,0.75,1],"t_grid":[0,1,2,5,9]}"#,
        r#"{"name":"statics_payoff","player":0,"action":0,"bonuses":[0,0.5,1],"sigmas":[[0.5,0.5],[0.2,0.8]],"t_grid":[0,3,9]}"#,
        r#"{"name":"statics_prior","player":1,"chain":[[1,2],[1,1],[2,1]],"sigma_grid":[0.1,0.5,0.9],"t_grid":[0,3,9]}"#,
    ];
    for (k, suite) in suites.iter().enumerate() {
        let cfg = format!(
            r#"{{"game":{{"type":"matching_pennies","delta":1,"gamma":1}},"costs":[0.02,0.02],"task":{{"command":"check","suite":{suite}}}}}"#
        );
        let (o, _) = run(dir.path(), &format!("s{k}"), &cfg, &[]);
        assert_eq!(o.status.code(), Some(0), "{suite}: {}", String::from_utf8_lossy(&o.stdout));
        assert_eq!(summary(&o)["pass"], true);
    }
}

#[test]
fn out_dir_from_environment() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, SOLVE).unwrap();
    let out = dir.path().join("env_out");
    let o = Command::new(env!("CARGO_BIN_EXE_sse"))
        .args(["--config", cfg.to_str().unwrap()])
        .env("SSE_OUT_DIR", &out)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(out.join("equilibrium.json").exists());
    assert!(fs::read_dir(&out).unwrap().all(|e| !e.unwrap().file_name().to_string_lossy().ends_with(".tmp")));
}
