use serde::Serialize;

use crate::error::Result;
use crate::feedback::{self, ServiceSet};
use crate::population::Population;

/// `Σ_i min_j L_i(θ_j, φ_i)`.
pub fn total_loss(pop: &Population, services: &ServiceSet) -> Result<f64> {
    Ok(feedback::evaluate(pop, services)?.total())
}

/// Largest group-average loss.
pub fn fair_objective(pop: &Population, services: &ServiceSet) -> Result<f64> {
    Ok(objectives_from_losses(pop, feedback::evaluate(pop, services)?.losses()).fair_objective)
}

/// Sum of group-average losses.
pub fn weighted_loss(pop: &Population, services: &ServiceSet) -> Result<f64> {
    Ok(objectives_from_losses(pop, feedback::evaluate(pop, services)?.losses()).weighted_loss)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Objectives {
    pub total_loss: f64,
    pub fair_objective: f64,
    pub weighted_loss: f64,
    pub group_means: Vec<f64>,
}

/// All objectives from one vector of per-user losses.
pub fn objectives_from_losses(pop: &Population, losses: &[f64]) -> Objectives {
    let group_means: Vec<f64> = pop
        .groups()
        .iter()
        .map(|members| members.iter().map(|&i| losses[i]).sum::<f64>() / members.len() as f64)
        .collect();
    Objectives {
        total_loss: losses.iter().sum(),
        fair_objective: group_means.iter().copied().fold(0.0, f64::max),
        weighted_loss: group_means.iter().sum(),
        group_means,
    }
}

pub fn objectives(pop: &Population, services: &ServiceSet) -> Result<Objectives> {
    Ok(objectives_from_losses(pop, feedback::evaluate(pop, services)?.losses()))
}

/// `m·Φ` as a repeated sum, so that `G ≤ m·Φ` can be compared exactly:
/// each term of `G` is at most `Φ` and float addition is monotone.
pub fn fair_upper_bound(fair: f64, m: usize) -> f64 {
    (0..m).fold(0.0, |acc, _| acc + fair)
}
