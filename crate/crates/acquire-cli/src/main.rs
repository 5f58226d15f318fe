use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use acquire::harness::{
    self, assumption_sweep, emit_report, standard_sweep_configs, synthetic_mixture, ExperimentConfig, GroupScheme,
    MixtureSpec,
};
use acquire::linreg::concentration_sweep;
use acquire::losses::{AlignmentMatrix, LossFamily, LossSpec};
use acquire::oracle::{approximation_bound, brute_force_opt, k_opt_constant};
use acquire::population::{load_population, IngestFormat, Population};
use acquire::seeding::{run_strategy, Strategy};
use acquire::{rng, Error};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "acquire", version, about = "Adaptive service initialization under bandit feedback")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Base seed; trial t uses seed ^ t.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file or directory; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one seeding strategy and print the chosen services.
    Seed {
        #[command(flatten)]
        common: Common,
        /// Population file (JSONL, or CSV by extension).
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value = "acquire")]
        strategy: String,
        #[arg(long, default_value_t = 1)]
        trials: usize,
        /// Include the per-step selection trace.
        #[arg(long)]
        emit_trace: bool,
    },
    /// Run a full experiment from a TOML or JSON config.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        config: PathBuf,
        /// Override the config's trial count.
        #[arg(long)]
        trials: Option<usize>,
        /// Override the config's k.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Brute-force optimum and instance constant for a small population.
    Oracle {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        k: usize,
    },
    /// Sample random user pairs and test the triangle inequalities.
    CheckAssumptions {
        #[command(flatten)]
        common: Common,
        /// Family name, or "all".
        #[arg(long, default_value = "all")]
        family: String,
        #[arg(long, default_value_t = 100)]
        pairs: usize,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 2)]
        d: usize,
        /// Multiply every constant by this factor.
        #[arg(long, default_value_t = 1.0)]
        inflate: f64,
    },
    /// Relative error of empirical regression losses across sample sizes.
    LinregSweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "256,1024,4096")]
        n_grid: Vec<usize>,
        #[arg(long, default_value_t = 50)]
        trials: usize,
    },
    /// Generate a planted mixture population as JSONL.
    Gen {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        clusters: usize,
        #[arg(long)]
        per_cluster: usize,
        #[arg(long, default_value_t = 2)]
        d: usize,
        #[arg(long, default_value_t = 10.0)]
        separation: f64,
        #[arg(long, default_value = "sq_mahalanobis")]
        family: String,
        /// Loss parameters as a JSON object, e.g. '{"delta": 1.0}'.
        #[arg(long, default_value = "{}")]
        params: String,
        /// by_cluster, random:M or imbalanced:RATIO.
        #[arg(long, default_value = "by_cluster")]
        groups: String,
    },
}

fn write_output(out: Option<&Path>, text: &str) -> acquire::Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            fs::write(p, format!("{text}\n")).map_err(|e| Error::io(p, e))
        }
        None => {
            let mut stdout = io::stdout().lock();
            match writeln!(stdout, "{text}") {
                Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(Error::io("<stdout>", e)),
                _ => Ok(()),
            }
        }
    }
}

fn pretty(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("json value serializes")
}

fn load(path: &Path) -> acquire::Result<Population> {
    load_population(path, IngestFormat::from_path(path))
}

fn parse_groups(s: &str) -> acquire::Result<GroupScheme> {
    let bad = || Error::Validation(format!("bad group scheme {s:?}"));
    match s.split_once(':') {
        None if s == "by_cluster" => Ok(GroupScheme::ByCluster),
        Some(("random", m)) => Ok(GroupScheme::Random { m: m.parse().map_err(|_| bad())? }),
        Some(("imbalanced", r)) => Ok(GroupScheme::Imbalanced { ratio: r.parse().map_err(|_| bad())? }),
        _ => Err(bad()),
    }
}

fn run(cli: Cli) -> acquire::Result<()> {
    match cli.command {
        Command::Seed {
            common,
            input,
            k,
            strategy,
            trials,
            emit_trace,
        } => {
            let pop = load(&input)?;
            let strategy: Strategy = strategy.parse()?;
            let mut runs = Vec::with_capacity(trials);
            for t in 0..trials {
                let seed = rng::trial_seed(common.seed, t);
                let run = run_strategy(strategy, &pop, k, seed)?;
                let obj = harness::objectives(&pop, &run.services)?;
                let mut v = json!({
                    "trial": t,
                    "seed": seed,
                    "services": run.services,
                    "total_loss": obj.total_loss,
                    "fair_objective": obj.fair_objective,
                    "ledger": run.ledger,
                });
                if emit_trace {
                    v["trace"] = serde_json::to_value(&run.trace).expect("trace serializes");
                }
                runs.push(v);
            }
            let out = json!({ "strategy": strategy, "k": k, "runs": runs });
            write_output(common.out.as_deref(), &pretty(&out))
        }
        Command::Bench {
            common,
            config,
            trials,
            k,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            cfg.seed = if common.seed != 0 { common.seed } else { cfg.seed };
            if let Some(t) = trials {
                cfg.trials = t;
            }
            if let Some(k) = k {
                cfg.k = k;
            }
            let report = harness::run_experiment(&cfg)?;
            match common.out.or(cfg.output_dir.clone()) {
                Some(dir) => {
                    for p in emit_report(&report, &dir)? {
                        eprintln!("wrote {}", p.display());
                    }
                    Ok(())
                }
                None => write_output(None, &pretty(&json!({ "summaries": report.summaries }))),
            }
        }
        Command::Oracle { common, input, k } => {
            let pop = load(&input)?;
            let opt = brute_force_opt(&pop, k)?;
            let c = AlignmentMatrix::from_population(&pop)?;
            let k_opt = k_opt_constant(&opt.clusters, &c)?;
            let out = json!({
                "clusters": opt.clusters,
                "centers": opt.centers,
                "total_loss": opt.total_loss,
                "k_opt": k_opt,
                "bound": approximation_bound(k_opt, k, opt.total_loss)?,
            });
            write_output(common.out.as_deref(), &pretty(&out))
        }
        Command::CheckAssumptions {
            common,
            family,
            pairs,
            samples,
            d,
            inflate,
        } => {
            let families = if family == "all" {
                vec![
                    LossFamily::SqMahalanobis,
                    LossFamily::Mahalanobis,
                    LossFamily::Huber,
                    LossFamily::Cosine,
                    LossFamily::MetricL2,
                    LossFamily::LipschitzSc,
                ]
            } else {
                vec![LossFamily::parse(&family)?]
            };
            if !(inflate > 0.0) {
                return Err(Error::Validation("inflate must be positive".into()));
            }
            let results = families
                .iter()
                .enumerate()
                .map(|(i, f)| assumption_sweep(*f, d, pairs, samples, inflate, rng::derive(common.seed, i as u64)))
                .collect::<acquire::Result<Vec<_>>>()?;
            write_output(common.out.as_deref(), &pretty(&serde_json::to_value(results).expect("json")))
        }
        Command::LinregSweep { common, n_grid, trials } => {
            let configs = standard_sweep_configs()?;
            let rows = concentration_sweep(&configs, &n_grid, trials, common.seed)?;
            let mut csv = String::from("config,n_i,sigma2,max_rel_error\n");
            for r in rows {
                csv.push_str(&format!(
                    "{},{},{},{}\n",
                    r.config,
                    r.n_i,
                    harness::report::format_float(r.sigma2),
                    harness::report::format_float(r.max_rel_error)
                ));
            }
            write_output(common.out.as_deref(), csv.trim_end())
        }
        Command::Gen {
            common,
            clusters,
            per_cluster,
            d,
            separation,
            family,
            params,
            groups,
        } => {
            let params = serde_json::from_str(&params)
                .map_err(|e| Error::Validation(format!("--params must be a JSON object: {e}")))?;
            let spec = MixtureSpec {
                num_clusters: clusters,
                users_per_cluster: per_cluster,
                d,
                separation,
                loss: LossSpec { family, params },
                groups: parse_groups(&groups)?,
            };
            let mixture = synthetic_mixture(&spec, common.seed)?;
            write_output(common.out.as_deref(), mixture.population.to_jsonl().trim_end())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}
