//! Service initialization strategies. All of them talk to users only through
//! [`Environment`], so they see losses and queried preferences and nothing else.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feedback::{Environment, PopulationEnv, QueryLedger, ServiceOrigin, ServiceSet};
use crate::population::Population;
use crate::rng::{self, Rng};

/// Fraction of the mean first-round loss used as the default ε-greedy noise scale.
pub const DEFAULT_NOISE_FRACTION: f64 = 0.1;

/// Serialized by name, e.g. `"fair_acquire"` or `"eps_greedy:0.5"`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Strategy {
    Acquire,
    FairAcquire,
    Random,
    Greedy,
    /// `noise_scale: None` means 10% of the mean loss after the first service.
    EpsGreedy { noise_scale: Option<f64> },
    BalancedRandom,
    BalancedGreedy,
    BalancedEpsGreedy { noise_scale: Option<f64> },
}

impl Strategy {
    pub const ALL: [Strategy; 8] = [
        Strategy::Acquire,
        Strategy::FairAcquire,
        Strategy::Random,
        Strategy::Greedy,
        Strategy::EpsGreedy { noise_scale: None },
        Strategy::BalancedRandom,
        Strategy::BalancedGreedy,
        Strategy::BalancedEpsGreedy { noise_scale: None },
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Acquire => "acquire",
            Strategy::FairAcquire => "fair_acquire",
            Strategy::Random => "random",
            Strategy::Greedy => "greedy",
            Strategy::EpsGreedy { .. } => "eps_greedy",
            Strategy::BalancedRandom => "balanced_random",
            Strategy::BalancedGreedy => "balanced_greedy",
            Strategy::BalancedEpsGreedy { .. } => "balanced_eps_greedy",
        }
    }

    /// Whether selection criteria are divided by the chooser's group size.
    pub fn is_group_scaled(&self) -> bool {
        matches!(
            self,
            Strategy::FairAcquire
                | Strategy::BalancedRandom
                | Strategy::BalancedGreedy
                | Strategy::BalancedEpsGreedy { .. }
        )
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Strategy::EpsGreedy { noise_scale: Some(s) }
            | Strategy::BalancedEpsGreedy { noise_scale: Some(s) }
                if !(*s > 0.0 && s.is_finite()) =>
            {
                Err(Error::Validation(format!("noise_scale must be positive, got {s}")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::EpsGreedy { noise_scale: Some(s) }
            | Strategy::BalancedEpsGreedy { noise_scale: Some(s) } => {
                write!(f, "{}:{s}", self.name())
            }
            _ => f.write_str(self.name()),
        }
    }
}

/// Accepts the snake_case names; ε-greedy variants take an optional
/// `:scale` suffix, e.g. `eps_greedy:0.5`.
impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let noise_scale = arg
            .map(|a| {
                a.parse::<f64>()
                    .map_err(|e| Error::Validation(format!("bad noise scale {a:?}: {e}")))
            })
            .transpose()?;
        let strategy = match name {
            "acquire" => Strategy::Acquire,
            "fair_acquire" => Strategy::FairAcquire,
            "random" => Strategy::Random,
            "greedy" => Strategy::Greedy,
            "eps_greedy" => Strategy::EpsGreedy { noise_scale },
            "balanced_random" => Strategy::BalancedRandom,
            "balanced_greedy" => Strategy::BalancedGreedy,
            "balanced_eps_greedy" => Strategy::BalancedEpsGreedy { noise_scale },
            other => return Err(Error::Validation(format!("unknown strategy {other:?}"))),
        };
        if arg.is_some() && !matches!(name, "eps_greedy" | "balanced_eps_greedy") {
            return Err(Error::Validation(format!("strategy {name} takes no argument")));
        }
        strategy.validate()?;
        Ok(strategy)
    }
}

impl Serialize for Strategy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Strategy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeedingStep {
    /// Losses observed before this pick; `None` for the first pick, which
    /// happens before anything is deployed.
    pub round_losses: Option<Vec<f64>>,
    /// Law the pick was drawn from. Deterministic rules record a point mass.
    pub selection_probs: Vec<f64>,
    pub chosen_user: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeedingTrace {
    pub steps: Vec<SeedingStep>,
    pub final_services: ServiceSet,
    /// Every user reached zero loss before `k` services were placed.
    pub stopped_early: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeedingRun {
    pub services: ServiceSet,
    pub trace: SeedingTrace,
    pub ledger: QueryLedger,
}

/// `p_i ∝ losses_i · weights_i`, normalized exactly.
pub fn selection_distribution(losses: &[f64], inverse_group_weights: Option<&[f64]>) -> Result<Vec<f64>> {
    if let Some((index, &value)) = losses
        .iter()
        .enumerate()
        .find(|(_, l)| !(**l >= 0.0) || !l.is_finite())
    {
        return Err(Error::NegativeLoss { index, value });
    }
    let crit: Vec<f64> = match inverse_group_weights {
        Some(w) => {
            if w.len() != losses.len() {
                return Err(Error::DimensionMismatch {
                    expected: losses.len(),
                    got: w.len(),
                });
            }
            if w.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
                return Err(Error::Validation("group weights must be positive".into()));
            }
            losses.iter().zip(w).map(|(l, w)| l * w).collect()
        }
        None => losses.to_vec(),
    };
    normalize(crit)
}

fn normalize(mut w: Vec<f64>) -> Result<Vec<f64>> {
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Validation("selection weights have zero total mass".into()));
    }
    w.iter_mut().for_each(|x| *x /= total);
    Ok(w)
}

/// Inverse-CDF draw; entries with zero probability are never returned.
fn sample_index(probs: &[f64], rng: &mut Rng) -> usize {
    let mut cum = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for p in probs {
        acc += p;
        cum.push(acc);
    }
    let u = rng.random::<f64>() * acc;
    cum.iter()
        .position(|&c| c > u)
        .unwrap_or_else(|| probs.iter().rposition(|&p| p > 0.0).expect("positive mass"))
}

/// Lowest index attaining the maximum.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn point_mass(n: usize, i: usize) -> Vec<f64> {
    let mut p = vec![0.0; n];
    p[i] = 1.0;
    p
}

/// Runs `strategy` against any environment.
pub fn seed_with<E: Environment>(
    strategy: Strategy,
    env: &mut E,
    k: usize,
    rng_seed: u64,
) -> Result<(ServiceSet, SeedingTrace)> {
    strategy.validate()?;
    let n = env.n();
    if k < 1 || k > n {
        return Err(Error::KOutOfRange { k, n });
    }
    let mut rng = rng::from_seed(rng_seed);

    // 1/|γ(i)| rescaled so the largest weight is exactly 1; with equal group
    // sizes this makes the scaled laws bit-identical to the unscaled ones.
    let weights: Option<Vec<f64>> = strategy.is_group_scaled().then(|| {
        let sizes = env.member_group_sizes();
        let min = *sizes.iter().min().expect("n >= 1") as f64;
        sizes.iter().map(|&s| min / s as f64).collect()
    });
    let scale = |v: &mut Vec<f64>| {
        if let Some(w) = &weights {
            v.iter_mut().zip(w).for_each(|(x, w)| *x *= w);
        }
    };

    let mut first = vec![1.0; n];
    scale(&mut first);
    let first = normalize(first)?;
    let chosen = sample_index(&first, &mut rng);
    let phi = env.query_preference(chosen)?;
    let mut services = ServiceSet::single(phi, ServiceOrigin::User(chosen));
    let mut steps = vec![SeedingStep {
        round_losses: None,
        selection_probs: first,
        chosen_user: chosen,
    }];

    let mut noise_scale = None;
    let mut stopped_early = false;
    while services.len() < k {
        let losses = env.deploy(&services)?.into_losses();
        if losses.iter().sum::<f64>() == 0.0 {
            stopped_early = true;
            break;
        }
        let (probs, chosen) = match strategy {
            Strategy::Acquire | Strategy::FairAcquire => {
                let p = selection_distribution(&losses, weights.as_deref())?;
                let i = sample_index(&p, &mut rng);
                (p, i)
            }
            Strategy::Random | Strategy::BalancedRandom => {
                let mut p = vec![1.0; n];
                scale(&mut p);
                let p = normalize(p)?;
                let i = sample_index(&p, &mut rng);
                (p, i)
            }
            Strategy::Greedy | Strategy::BalancedGreedy => {
                let mut crit = losses.clone();
                scale(&mut crit);
                let i = argmax(&crit);
                (point_mass(n, i), i)
            }
            Strategy::EpsGreedy { noise_scale: s } | Strategy::BalancedEpsGreedy { noise_scale: s } => {
                let sigma = *noise_scale.get_or_insert_with(|| {
                    s.unwrap_or_else(|| DEFAULT_NOISE_FRACTION * losses.iter().sum::<f64>() / n as f64)
                });
                let mut crit: Vec<f64> = losses
                    .iter()
                    .map(|l| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        l + sigma * z
                    })
                    .collect();
                scale(&mut crit);
                let i = argmax(&crit);
                (point_mass(n, i), i)
            }
        };
        let phi = env.query_preference(chosen)?;
        services.push(phi, ServiceOrigin::User(chosen))?;
        steps.push(SeedingStep {
            round_losses: Some(losses),
            selection_probs: probs,
            chosen_user: chosen,
        });
    }

    let trace = SeedingTrace {
        steps,
        final_services: services.clone(),
        stopped_early,
    };
    Ok((services, trace))
}

/// Runs `strategy` on a fully known population.
pub fn run_strategy(strategy: Strategy, pop: &Population, k: usize, rng_seed: u64) -> Result<SeedingRun> {
    let mut env = PopulationEnv::new(pop);
    let (services, trace) = seed_with(strategy, &mut env, k, rng_seed)?;
    Ok(SeedingRun {
        services,
        trace,
        ledger: env.into_ledger(),
    })
}

pub fn acquire_seed(pop: &Population, k: usize, rng_seed: u64) -> Result<SeedingRun> {
    run_strategy(Strategy::Acquire, pop, k, rng_seed)
}

pub fn fair_acquire_seed(pop: &Population, k: usize, rng_seed: u64) -> Result<SeedingRun> {
    run_strategy(Strategy::FairAcquire, pop, k, rng_seed)
}

pub fn baseline_seed(strategy: Strategy, pop: &Population, k: usize, rng_seed: u64) -> Result<SeedingRun> {
    if matches!(strategy, Strategy::Acquire | Strategy::FairAcquire) {
        return Err(Error::Validation(format!("{strategy} is not a baseline")));
    }
    run_strategy(strategy, pop, k, rng_seed)
}
