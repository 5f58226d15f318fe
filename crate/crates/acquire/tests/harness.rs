use std::collections::BTreeSet;
use std::fs;

use acquire::harness::{
    emit_report, run_experiment, synthetic_mixture, DynamicsMethod, DynamicsSettings, ExperimentConfig, GroupScheme,
    InstanceSource, MixtureSpec,
};
use acquire::oracle::brute_force_opt;
use acquire::population::{group_sizes, load_population, IngestFormat};
use acquire::{LossSpec, Strategy};

fn mixture(clusters: usize, per: usize, separation: f64) -> MixtureSpec {
    MixtureSpec {
        num_clusters: clusters,
        users_per_cluster: per,
        d: clusters.max(3) - 1,
        separation,
        loss: LossSpec {
            family: "sq_mahalanobis".into(),
            params: Default::default(),
        },
        groups: GroupScheme::ByCluster,
    }
}

fn config(spec: MixtureSpec, k: usize, strategies: Vec<Strategy>, trials: usize) -> ExperimentConfig {
    ExperimentConfig {
        instance: InstanceSource::Mixture(spec),
        k,
        strategies,
        trials,
        seed: 42,
        dynamics: None,
        output_dir: None,
    }
}

#[test]
fn reports_are_deterministic_and_byte_stable() {
    let mut cfg = config(mixture(3, 4, 8.0), 3, vec![Strategy::Random], 1);
    let a = run_experiment(&cfg).unwrap();
    assert_eq!(a, run_experiment(&cfg).unwrap());

    cfg.strategies = vec![Strategy::Acquire, Strategy::FairAcquire, Strategy::Greedy];
    cfg.trials = 6;
    cfg.dynamics = Some(DynamicsSettings {
        method: DynamicsMethod::Kmeans,
        eta: None,
        tol: 1e-9,
        max_iter: 100,
    });
    let report = run_experiment(&cfg).unwrap();
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let f1 = emit_report(&report, d1.path()).unwrap();
    let f2 = emit_report(&run_experiment(&cfg).unwrap(), d2.path()).unwrap();
    assert_eq!(f1.len(), 3);
    for (a, b) in f1.iter().zip(&f2) {
        assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap(), "{}", a.display());
    }
    let rows = fs::read_to_string(d1.path().join("metrics.csv")).unwrap().lines().count();
    assert_eq!(rows, 1 + 3 * 6);
}

#[test]
fn no_dynamics_means_no_trajectory_file() {
    let report = run_experiment(&config(mixture(2, 3, 5.0), 2, vec![Strategy::Acquire], 2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = emit_report(&report, dir.path()).unwrap();
    assert_eq!(files.len(), 2);
    assert!(!dir.path().join("trajectories.csv").exists());
}

#[test]
fn accounting_matches_the_ledger() {
    let cfg = config(mixture(3, 5, 6.0), 4, Strategy::ALL.to_vec(), 20);
    let report = run_experiment(&cfg).unwrap();
    for t in &report.trials {
        assert_eq!(t.loss_evals, report.n as u64 * t.rounds);
        assert!(t.pref_queries <= cfg.k);
        assert_eq!(t.rounds as usize, t.pref_queries - 1 + usize::from(t.stopped_early));
    }
}

#[test]
fn dynamics_trajectories_never_increase() {
    for method in [DynamicsMethod::Kmeans, DynamicsMethod::MultiplicativeWeights] {
        let mut cfg = config(mixture(3, 6, 6.0), 3, vec![Strategy::Acquire, Strategy::Random], 30);
        cfg.dynamics = Some(DynamicsSettings {
            method,
            eta: None,
            tol: 1e-9,
            max_iter: 200,
        });
        let report = run_experiment(&cfg).unwrap();
        for s in &report.summaries {
            assert!(s.trajectories_non_increasing, "{method:?} {}", s.strategy);
        }
    }
}

#[test]
fn planted_partition_is_recovered() {
    for seed in 0..5 {
        let m = synthetic_mixture(&mixture(3, 4, 50.0), seed).unwrap();
        let opt = brute_force_opt(&m.population, 3).unwrap();
        let found: BTreeSet<Vec<usize>> = opt.clusters.into_iter().collect();
        let planted: BTreeSet<Vec<usize>> =
            (0..3).map(|c| (0..12).filter(|&i| m.labels[i] == c).collect()).collect();
        assert_eq!(found, planted);
    }
}

#[test]
fn acquire_beats_random_on_separated_mixture() {
    let report = run_experiment(&config(mixture(4, 10, 20.0), 4, vec![Strategy::Acquire, Strategy::Random], 500)).unwrap();
    let a = report.summary(Strategy::Acquire).unwrap().mean_total_loss;
    let r = report.summary(Strategy::Random).unwrap().mean_total_loss;
    assert!(a < r, "{a} vs {r}");
}

#[test]
fn config_files_resolve_relative_instances() {
    let dir = tempfile::tempdir().unwrap();
    let pop = synthetic_mixture(&mixture(2, 3, 4.0), 1).unwrap().population;
    fs::write(dir.path().join("pop.jsonl"), pop.to_jsonl()).unwrap();
    fs::write(
        dir.path().join("exp.toml"),
        "k = 2\ntrials = 3\nstrategies = [\"acquire\", \"eps_greedy:0.5\"]\n\n[instance]\nfile = \"pop.jsonl\"\n",
    )
    .unwrap();
    let cfg = ExperimentConfig::load(dir.path().join("exp.toml")).unwrap();
    assert_eq!(cfg.strategies[1], Strategy::EpsGreedy { noise_scale: Some(0.5) });
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.n, 6);

    let json = serde_json::to_string(&cfg).unwrap();
    fs::write(dir.path().join("exp.json"), json).unwrap();
    assert_eq!(ExperimentConfig::load(dir.path().join("exp.json")).unwrap(), cfg);

    fs::write(dir.path().join("bad.toml"), "k = 0\n[instance]\nfile = \"pop.jsonl\"\n").unwrap();
    assert!(ExperimentConfig::load(dir.path().join("bad.toml")).unwrap_err().is_validation());
}

#[test]
fn jsonl_round_trip_preserves_the_population() {
    let mut spec = mixture(3, 4, 5.0);
    spec.groups = GroupScheme::Random { m: 2 };
    let pop = synthetic_mixture(&spec, 3).unwrap().population;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.jsonl");
    fs::write(&path, pop.to_jsonl()).unwrap();
    let back = load_population(&path, IngestFormat::Jsonl).unwrap();
    assert_eq!(back, pop);
    assert_eq!(group_sizes(&back).values().sum::<usize>(), back.n());
}
