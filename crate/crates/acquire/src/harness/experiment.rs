use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::objectives;
use super::synthetic::{synthetic_mixture, MixtureSpec};
use crate::dynamics::{self, KMeansOptions, MwOptions, MwUpdate, Trajectory};
use crate::error::{Error, Result};
use crate::population::{load_population, IngestFormat, Population};
use crate::rng;
use crate::seeding::{run_strategy, Strategy};

pub const DEFAULT_TRIALS: usize = 500;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceSource {
    /// JSONL or CSV file; relative paths resolve against the config file.
    File(PathBuf),
    Mixture(MixtureSpec),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicsMethod {
    Kmeans,
    MultiplicativeWeights,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsSettings {
    pub method: DynamicsMethod,
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

fn default_tol() -> f64 {
    dynamics::DEFAULT_TOL
}

fn default_max_iter() -> usize {
    dynamics::DEFAULT_MAX_ITER
}

fn default_trials() -> usize {
    DEFAULT_TRIALS
}

fn default_strategies() -> Vec<Strategy> {
    vec![Strategy::Acquire, Strategy::Random]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub instance: InstanceSource,
    pub k: usize,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<Strategy>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub dynamics: Option<DynamicsSettings>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::Parse {
                line: e.line(),
                message: e.to_string(),
            })?
        } else {
            toml::from_str(&text).map_err(|e| Error::Parse {
                line: e
                    .span()
                    .map_or(0, |s| text[..s.start].matches('\n').count() + 1),
                message: e.message().to_string(),
            })?
        };
        if let InstanceSource::File(p) = &mut cfg.instance {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Validation("trials must be >= 1".into()));
        }
        if self.k == 0 {
            return Err(Error::Validation("k must be >= 1".into()));
        }
        if self.strategies.is_empty() {
            return Err(Error::Validation("at least one strategy required".into()));
        }
        for s in &self.strategies {
            s.validate()?;
        }
        if let Some(d) = &self.dynamics {
            if d.eta.is_some_and(|e| !(e > 0.0 && e.is_finite())) {
                return Err(Error::Validation("dynamics eta must be positive".into()));
            }
            if !(d.tol >= 0.0) || d.max_iter == 0 {
                return Err(Error::Validation("dynamics needs tol >= 0 and max_iter >= 1".into()));
            }
        }
        Ok(())
    }

    pub fn population(&self) -> Result<Population> {
        match &self.instance {
            InstanceSource::File(p) => load_population(p, IngestFormat::from_path(p)),
            InstanceSource::Mixture(spec) => Ok(synthetic_mixture(spec, rng::derive(self.seed, u64::MAX))?.population),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrajectorySummary {
    pub total_loss: Vec<f64>,
    pub hard_loss: Vec<f64>,
    pub fair_objective: Vec<f64>,
    pub converged: bool,
}

impl From<&Trajectory> for TrajectorySummary {
    fn from(t: &Trajectory) -> Self {
        Self {
            total_loss: t.total_loss.clone(),
            hard_loss: t.hard_loss.clone(),
            fair_objective: t.fair_objective.clone(),
            converged: t.converged,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialResult {
    pub strategy: Strategy,
    pub trial: usize,
    pub seed: u64,
    pub k: usize,
    pub total_loss: f64,
    pub fair_objective: f64,
    pub weighted_loss: f64,
    pub group_means: Vec<f64>,
    pub loss_evals: u64,
    pub pref_queries: usize,
    pub rounds: u64,
    pub stopped_early: bool,
    pub trajectory: Option<TrajectorySummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StrategySummary {
    pub strategy: Strategy,
    pub mean_total_loss: f64,
    pub mean_fair_objective: f64,
    pub mean_group_losses: Vec<f64>,
    pub mean_loss_evals: f64,
    pub mean_pref_queries: f64,
    /// Mean final hard loss after dynamics, when dynamics ran.
    pub mean_converged_loss: Option<f64>,
    pub mean_dynamics_iterations: Option<f64>,
    pub trajectories_non_increasing: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub config: ExperimentConfig,
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub summaries: Vec<StrategySummary>,
    pub trials: Vec<TrialResult>,
}

impl MetricsReport {
    pub fn summary(&self, strategy: Strategy) -> Option<&StrategySummary> {
        self.summaries.iter().find(|s| s.strategy == strategy)
    }

    pub fn has_trajectories(&self) -> bool {
        self.trials.iter().any(|t| t.trajectory.is_some())
    }
}

fn run_dynamics(pop: &Population, init: &crate::feedback::ServiceSet, d: &DynamicsSettings) -> Result<Trajectory> {
    match d.method {
        DynamicsMethod::Kmeans => dynamics::generalized_kmeans(
            pop,
            init,
            KMeansOptions {
                tol: d.tol,
                max_iter: d.max_iter,
            },
        ),
        DynamicsMethod::MultiplicativeWeights => dynamics::multiplicative_weights(
            pop,
            init,
            MwOptions {
                eta: d.eta,
                iters: d.max_iter,
                update: MwUpdate::Exponential,
            },
        ),
    }
}

fn run_trial(pop: &Population, cfg: &ExperimentConfig, strategy: Strategy, trial: usize) -> Result<TrialResult> {
    let seed = rng::trial_seed(cfg.seed, trial);
    let run = run_strategy(strategy, pop, cfg.k, seed)?;
    let obj = objectives(pop, &run.services)?;
    let trajectory = cfg
        .dynamics
        .as_ref()
        .map(|d| run_dynamics(pop, &run.services, d))
        .transpose()?;
    Ok(TrialResult {
        strategy,
        trial,
        seed,
        k: cfg.k,
        total_loss: obj.total_loss,
        fair_objective: obj.fair_objective,
        weighted_loss: obj.weighted_loss,
        group_means: obj.group_means,
        loss_evals: run.ledger.loss_observations,
        pref_queries: run.ledger.preference_queries.len(),
        rounds: run.ledger.rounds(pop.n()),
        stopped_early: run.trace.stopped_early,
        trajectory: trajectory.as_ref().map(TrajectorySummary::from),
    })
}

fn summarize(strategy: Strategy, trials: &[TrialResult], m: usize) -> StrategySummary {
    let count = trials.len() as f64;
    let mean = |f: &dyn Fn(&TrialResult) -> f64| trials.iter().map(f).sum::<f64>() / count;
    let with_traj: Vec<&TrajectorySummary> = trials.iter().filter_map(|t| t.trajectory.as_ref()).collect();
    let (converged, iterations) = if with_traj.is_empty() {
        (None, None)
    } else {
        let c = with_traj.len() as f64;
        (
            Some(with_traj.iter().map(|t| *t.hard_loss.last().expect("nonempty")).sum::<f64>() / c),
            Some(with_traj.iter().map(|t| (t.total_loss.len() - 1) as f64).sum::<f64>() / c),
        )
    };
    StrategySummary {
        strategy,
        mean_total_loss: mean(&|t| t.total_loss),
        mean_fair_objective: mean(&|t| t.fair_objective),
        mean_group_losses: (0..m).map(|g| mean(&|t| t.group_means[g])).collect(),
        mean_loss_evals: mean(&|t| t.loss_evals as f64),
        mean_pref_queries: mean(&|t| t.pref_queries as f64),
        mean_converged_loss: converged,
        mean_dynamics_iterations: iterations,
        trajectories_non_increasing: with_traj
            .iter()
            .all(|t| t.total_loss.windows(2).all(|w| w[1] <= w[0])),
    }
}

/// Runs every strategy for `trials` seeded trials. Trial `t` of every
/// strategy uses seed `base ^ t`; results are deterministic and ordered by
/// strategy, then trial.
pub fn run_experiment(config: &ExperimentConfig) -> Result<MetricsReport> {
    config.validate()?;
    let pop = config.population()?;
    run_experiment_on(config, &pop)
}

/// As [`run_experiment`] on an already loaded population.
pub fn run_experiment_on(config: &ExperimentConfig, pop: &Population) -> Result<MetricsReport> {
    config.validate()?;
    if config.k > pop.n() {
        return Err(Error::KOutOfRange { k: config.k, n: pop.n() });
    }
    let jobs: Vec<(Strategy, usize)> = config
        .strategies
        .iter()
        .flat_map(|&s| (0..config.trials).map(move |t| (s, t)))
        .collect();
    let trials = jobs
        .par_iter()
        .map(|&(s, t)| run_trial(pop, config, s, t).map_err(|e| e.context(format!("strategy {s}, trial {t}"))))
        .collect::<Result<Vec<_>>>()?;
    let summaries = config
        .strategies
        .iter()
        .enumerate()
        .map(|(i, &s)| summarize(s, &trials[i * config.trials..(i + 1) * config.trials], pop.m()))
        .collect();
    Ok(MetricsReport {
        config: config.clone(),
        n: pop.n(),
        m: pop.m(),
        d: pop.dim(),
        summaries,
        trials,
    })
}
