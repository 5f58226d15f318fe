use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn acquire(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_acquire"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn gen_population(dir: &Path) -> String {
    let path = dir.join("pop.jsonl");
    let p = path.to_str().unwrap().to_string();
    let out = acquire(&["gen", "--clusters", "3", "--per-cluster", "3", "--separation", "20", "--seed", "5", "--out", &p]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    p
}

#[test]
fn gen_then_seed_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let pop = gen_population(dir.path());
    assert_eq!(fs::read_to_string(&pop).unwrap().lines().count(), 9);

    let a = acquire(&["seed", "--input", &pop, "--k", "3", "--seed", "11", "--trials", "3", "--emit-trace"]);
    let b = acquire(&["seed", "--input", &pop, "--k", "3", "--seed", "11", "--trials", "3", "--emit-trace"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);

    let v: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    let runs = v["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 3);
    for r in runs {
        assert_eq!(r["trace"]["steps"].as_array().unwrap().len(), 3);
        assert_eq!(r["ledger"]["preference_queries"].as_array().unwrap().len(), 3);
    }
}

#[test]
fn oracle_bounds_seeding() {
    let dir = tempfile::tempdir().unwrap();
    let pop = gen_population(dir.path());
    let out = acquire(&["oracle", "--input", &pop, "--k", "3"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let opt = v["total_loss"].as_f64().unwrap();
    assert!(v["bound"].as_f64().unwrap() >= opt);
    assert!(v["k_opt"].as_f64().unwrap() > 0.0);
}

#[test]
fn bench_writes_report_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    fs::write(
        &cfg,
        "k = 2\ntrials = 4\nseed = 7\nstrategies = [\"acquire\", \"greedy\"]\n\n\
         [instance.mixture]\nnum_clusters = 2\nusers_per_cluster = 5\nd = 2\nseparation = 10.0\n\n\
         [dynamics]\nmethod = \"kmeans\"\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = acquire(&["bench", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["summary.json", "metrics.csv", "trajectories.csv"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    let metrics = fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 2 * 4);
}

#[test]
fn check_assumptions_and_linreg() {
    let out = acquire(&["check-assumptions", "--family", "metric_l2", "--pairs", "3", "--samples", "100"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v[0]["total_violations"], 0);

    let out = acquire(&["linreg-sweep", "--n-grid", "64", "--trials", "2"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().next(), Some("config,n_i,sigma2,max_rel_error"));
    assert_eq!(text.lines().count(), 1 + 5);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let pop = gen_population(dir.path());
    assert_eq!(acquire(&["seed", "--input", &pop, "--k", "0"]).status.code(), Some(2));
    assert_eq!(acquire(&["seed", "--input", &pop, "--k", "2", "--strategy", "bogus"]).status.code(), Some(2));
    assert_eq!(acquire(&["gen", "--clusters", "2", "--per-cluster", "2", "--groups", "weird"]).status.code(), Some(2));

    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, "{\"user_id\": 0, \"phi\": [1.0]\n").unwrap();
    assert_eq!(acquire(&["seed", "--input", bad.to_str().unwrap(), "--k", "1"]).status.code(), Some(2));

    let missing = dir.path().join("missing.jsonl");
    assert_eq!(acquire(&["seed", "--input", missing.to_str().unwrap(), "--k", "1"]).status.code(), Some(1));
}
