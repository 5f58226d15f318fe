//! What happens after initialization: users keep re-choosing and services keep
//! refitting to whoever chose them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feedback::{self, ServiceSet};
use crate::harness::metrics::objectives_from_losses;
use crate::losses::{refit_with, LossModel, RefitOptions};
use crate::population::{Population, PreferenceVector};

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 500;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Assignment {
    pub choice: Vec<usize>,
    pub per_user_loss: Vec<f64>,
}

pub fn assign(pop: &Population, services: &ServiceSet) -> Result<Assignment> {
    let round = feedback::evaluate(pop, services)?;
    Ok(Assignment {
        choice: round.choices().to_vec(),
        per_user_loss: round.into_losses(),
    })
}

/// Services after each iteration, starting with the initial set.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trajectory {
    pub services: Vec<ServiceSet>,
    /// The objective the dynamics descends; equal to `hard_loss` for k-means.
    pub total_loss: Vec<f64>,
    /// Loss when every user takes its single best service.
    pub hard_loss: Vec<f64>,
    pub fair_objective: Vec<f64>,
    pub converged: bool,
}

impl Trajectory {
    fn start(services: ServiceSet, objective: f64, hard: f64, fair: f64) -> Self {
        Self {
            services: vec![services],
            total_loss: vec![objective],
            hard_loss: vec![hard],
            fair_objective: vec![fair],
            converged: false,
        }
    }

    fn record(&mut self, services: ServiceSet, objective: f64, hard: f64, fair: f64) {
        self.services.push(services);
        self.total_loss.push(objective);
        self.hard_loss.push(hard);
        self.fair_objective.push(fair);
    }

    pub fn iterations(&self) -> usize {
        self.services.len() - 1
    }

    pub fn final_services(&self) -> &ServiceSet {
        self.services.last().expect("trajectory has its initial point")
    }

    pub fn final_loss(&self) -> f64 {
        *self.total_loss.last().expect("trajectory has its initial point")
    }

    pub fn is_non_increasing(&self) -> bool {
        self.total_loss.windows(2).all(|w| w[1] <= w[0])
    }
}

fn column_objective(pop: &Population, theta: &[f64], weights: &[f64]) -> f64 {
    pop.users()
        .iter()
        .zip(weights)
        .filter(|(_, w)| **w > 0.0)
        .map(|(u, w)| w * u.loss.eval_unchecked(theta, u.preference.as_slice()))
        .sum()
}

/// Refits one service to the users with positive weight. Keeps `current` when
/// nobody has weight or when the refit would not lower the weighted loss.
fn refit_service(
    pop: &Population,
    current: &PreferenceVector,
    weights: &[f64],
    opts: RefitOptions,
) -> Result<PreferenceVector> {
    let (members, w): (Vec<(&LossModel, &PreferenceVector)>, Vec<f64>) = pop
        .users()
        .iter()
        .zip(weights)
        .filter(|(_, w)| **w > 0.0)
        .map(|(u, &w)| ((&u.loss, &u.preference), w))
        .unzip();
    if members.is_empty() {
        return Ok(current.clone());
    }
    let candidate = refit_with(&members, &w, opts)?;
    if column_objective(pop, candidate.as_slice(), weights) <= column_objective(pop, current.as_slice(), weights) {
        Ok(candidate)
    } else {
        Ok(current.clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeansOptions {
    /// Stop once the relative improvement drops below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

/// Alternating minimization: every user picks its best service, then every
/// chosen service refits to its choosers. Unchosen services stay put.
///
/// An iteration that would raise the total loss (possible only through refit
/// tolerance) ends the run with the previous services kept.
pub fn generalized_kmeans(pop: &Population, init: &ServiceSet, opts: KMeansOptions) -> Result<Trajectory> {
    if init.dim() != pop.dim() {
        return Err(Error::DimensionMismatch {
            expected: pop.dim(),
            got: init.dim(),
        });
    }
    let refit_opts = RefitOptions::default();
    let mut current = init.clone();
    let mut a = assign(pop, &current)?;
    let obj = objectives_from_losses(pop, &a.per_user_loss);
    let mut traj = Trajectory::start(current.clone(), obj.total_loss, obj.total_loss, obj.fair_objective);

    for iter in 1..=opts.max_iter {
        let mut next = current.clone();
        for j in 0..current.len() {
            let w: Vec<f64> = a.choice.iter().map(|&c| if c == j { 1.0 } else { 0.0 }).collect();
            let theta = refit_service(pop, &current.thetas()[j], &w, refit_opts)
                .map_err(|e| e.context(format!("k-means iteration {iter}, service {j}")))?;
            if &theta != &current.thetas()[j] {
                next.set_theta(j, theta);
            }
        }
        let next_a = assign(pop, &next)?;
        let obj = objectives_from_losses(pop, &next_a.per_user_loss);
        let prev = traj.final_loss();
        if obj.total_loss > prev {
            traj.converged = true;
            break;
        }
        traj.record(next.clone(), obj.total_loss, obj.total_loss, obj.fair_objective);
        current = next;
        a = next_a;
        if prev - obj.total_loss <= opts.tol * prev {
            traj.converged = true;
            break;
        }
    }
    Ok(traj)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MwUpdate {
    /// `w_ij ← w_ij·exp(−η L_ij)`, then row-normalize.
    Exponential,
    /// All weight on each user's best service; the `η → ∞` limit.
    HardMax,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MwOptions {
    /// Defaults to `1 / (mean per-user loss under the initial services)`.
    pub eta: Option<f64>,
    pub iters: usize,
    pub update: MwUpdate,
}

impl Default for MwOptions {
    fn default() -> Self {
        Self {
            eta: None,
            iters: DEFAULT_MAX_ITER,
            update: MwUpdate::Exponential,
        }
    }
}

/// Row-normalized `n×k` weights, stored as logs.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightState {
    k: usize,
    log_w: Vec<f64>,
}

impl WeightState {
    pub fn uniform(n: usize, k: usize) -> Self {
        Self {
            k,
            log_w: vec![-(k as f64).ln(); n * k],
        }
    }

    pub fn n(&self) -> usize {
        self.log_w.len() / self.k
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.log_w[i * self.k + j].exp()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.k).map(|j| self.get(i, j)).collect()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n()).map(|i| self.get(i, j)).collect()
    }

    fn exponential_step(&mut self, eta: f64, losses: &[f64]) {
        for row in self.log_w.chunks_mut(self.k).zip(losses.chunks(self.k)) {
            let (lw, l) = row;
            lw.iter_mut().zip(l).for_each(|(w, l)| *w -= eta * l);
            let max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + lw.iter().map(|w| (w - max).exp()).sum::<f64>().ln();
            lw.iter_mut().for_each(|w| *w -= lse);
        }
    }

    fn hard_step(&mut self, choice: &[usize]) {
        for (i, &c) in choice.iter().enumerate() {
            for j in 0..self.k {
                self.log_w[i * self.k + j] = if j == c { 0.0 } else { f64::NEG_INFINITY };
            }
        }
    }
}

/// `losses[i·k + j] = L_i(θ_j, φ_i)`.
fn loss_matrix(pop: &Population, services: &ServiceSet) -> Vec<f64> {
    let mut out = Vec::with_capacity(pop.n() * services.len());
    for u in pop.users() {
        for t in services.thetas() {
            out.push(u.loss.eval_unchecked(t.as_slice(), u.preference.as_slice()));
        }
    }
    out
}

/// `Σ_j Σ_i w_ij L_ij`, summed column by column.
fn soft_loss(w: &WeightState, losses: &[f64]) -> f64 {
    let (n, k) = (w.n(), w.k());
    (0..k)
        .map(|j| {
            (0..n)
                .map(|i| {
                    let wij = w.get(i, j);
                    if wij > 0.0 {
                        wij * losses[i * k + j]
                    } else {
                        0.0
                    }
                })
                .sum::<f64>()
        })
        .sum()
}

/// Multiplicative-weights dynamics. Users spread weight over services; each
/// service refits to the weighted population.
///
/// `total_loss` reports the weighted (soft) loss `Σ w_ij L_ij`, which the
/// update provably does not increase; the hard best-response loss is in
/// `hard_loss`. The run stops early once the soft loss stops decreasing.
pub fn multiplicative_weights(pop: &Population, init: &ServiceSet, opts: MwOptions) -> Result<Trajectory> {
    if opts.iters < 1 {
        return Err(Error::Validation("multiplicative weights needs iters >= 1".into()));
    }
    if let Some(eta) = opts.eta {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::Validation(format!("eta must be positive, got {eta}")));
        }
    }
    if init.dim() != pop.dim() {
        return Err(Error::DimensionMismatch {
            expected: pop.dim(),
            got: init.dim(),
        });
    }
    let refit_opts = RefitOptions::default();
    let (n, k) = (pop.n(), init.len());
    let mut services = init.clone();
    let mut weights = WeightState::uniform(n, k);
    let mut a = assign(pop, &services)?;
    let mut losses = loss_matrix(pop, &services);
    let hard = objectives_from_losses(pop, &a.per_user_loss);
    let eta = opts.eta.unwrap_or_else(|| {
        let mean = hard.total_loss / n as f64;
        if mean > 0.0 {
            1.0 / mean
        } else {
            1.0
        }
    });
    let start = match opts.update {
        MwUpdate::Exponential => soft_loss(&weights, &losses),
        MwUpdate::HardMax => hard.total_loss,
    };
    let mut traj = Trajectory::start(services.clone(), start, hard.total_loss, hard.fair_objective);

    for iter in 1..=opts.iters {
        let mut next_w = weights.clone();
        match opts.update {
            MwUpdate::Exponential => next_w.exponential_step(eta, &losses),
            MwUpdate::HardMax => next_w.hard_step(&a.choice),
        }
        let mut next = services.clone();
        for j in 0..k {
            let theta = refit_service(pop, &services.thetas()[j], &next_w.column(j), refit_opts)
                .map_err(|e| e.context(format!("multiplicative weights iteration {iter}, service {j}")))?;
            if &theta != &services.thetas()[j] {
                next.set_theta(j, theta);
            }
        }
        let next_losses = loss_matrix(pop, &next);
        let next_a = assign(pop, &next)?;
        let hard = objectives_from_losses(pop, &next_a.per_user_loss);
        let objective = match opts.update {
            MwUpdate::Exponential => soft_loss(&next_w, &next_losses),
            MwUpdate::HardMax => hard.total_loss,
        };
        let prev = traj.final_loss();
        if objective > prev {
            traj.converged = true;
            break;
        }
        traj.record(next.clone(), objective, hard.total_loss, hard.fair_objective);
        services = next;
        weights = next_w;
        losses = next_losses;
        a = next_a;
        if objective == prev {
            traj.converged = true;
            break;
        }
    }
    Ok(traj)
}
