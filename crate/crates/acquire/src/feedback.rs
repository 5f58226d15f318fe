//! The provider/user boundary. Providers deploy services and see only each
//! user's loss on the service that user picked; preferences leak only through
//! explicit, ledgered queries.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::population::{Population, PreferenceVector, UserProfile};

/// Below this many users a deployment is evaluated on the calling thread.
const PARALLEL_THRESHOLD: usize = 2048;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceOrigin {
    /// Centered at the queried preference of this user.
    User(usize),
    External,
}

/// Ordered, nonempty list of deployed service parameters sharing one dimension.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ServiceSet {
    thetas: Vec<PreferenceVector>,
    origin: Vec<ServiceOrigin>,
}

impl ServiceSet {
    pub fn new(thetas: Vec<PreferenceVector>, origin: Vec<ServiceOrigin>) -> Result<Self> {
        if thetas.is_empty() {
            return Err(Error::EmptyServiceSet);
        }
        if thetas.len() != origin.len() {
            return Err(Error::Validation("one origin per service required".into()));
        }
        let d = thetas[0].dim();
        if let Some(t) = thetas.iter().find(|t| t.dim() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: t.dim(),
            });
        }
        Ok(Self { thetas, origin })
    }

    pub fn single(theta: PreferenceVector, origin: ServiceOrigin) -> Self {
        Self {
            thetas: vec![theta],
            origin: vec![origin],
        }
    }

    /// Services with `External` origin built from raw coordinates.
    pub fn from_vectors(thetas: Vec<Vec<f64>>) -> Result<Self> {
        let origin = vec![ServiceOrigin::External; thetas.len()];
        let thetas = thetas
            .into_iter()
            .map(PreferenceVector::new)
            .collect::<Result<Vec<_>>>()?;
        Self::new(thetas, origin)
    }

    pub fn push(&mut self, theta: PreferenceVector, origin: ServiceOrigin) -> Result<()> {
        if theta.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: theta.dim(),
            });
        }
        self.thetas.push(theta);
        self.origin.push(origin);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.thetas[0].dim()
    }

    pub fn thetas(&self) -> &[PreferenceVector] {
        &self.thetas
    }

    pub fn origins(&self) -> &[ServiceOrigin] {
        &self.origin
    }

    pub(crate) fn set_theta(&mut self, j: usize, theta: PreferenceVector) {
        self.thetas[j] = theta;
        self.origin[j] = ServiceOrigin::External;
    }
}

/// What a provider learns from one deployment.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FeedbackRound {
    losses: Vec<f64>,
    choices: Vec<usize>,
}

impl FeedbackRound {
    /// For environments other than [`PopulationEnv`]. Losses must be finite
    /// and nonnegative, one choice per loss.
    pub fn from_parts(losses: Vec<f64>, choices: Vec<usize>) -> Result<Self> {
        if losses.len() != choices.len() {
            return Err(Error::DimensionMismatch {
                expected: losses.len(),
                got: choices.len(),
            });
        }
        if let Some((index, &value)) = losses.iter().enumerate().find(|(_, l)| !(**l >= 0.0 && l.is_finite())) {
            return Err(Error::NegativeLoss { index, value });
        }
        Ok(Self { losses, choices })
    }

    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    pub fn choices(&self) -> &[usize] {
        &self.choices
    }

    pub fn total(&self) -> f64 {
        self.losses.iter().sum()
    }

    pub fn into_losses(self) -> Vec<f64> {
        self.losses
    }
}

/// Append-only record of what was revealed to the provider.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct QueryLedger {
    pub preference_queries: Vec<usize>,
    pub loss_observations: u64,
}

impl QueryLedger {
    pub fn rounds(&self, n: usize) -> u64 {
        if n == 0 {
            0
        } else {
            self.loss_observations / n as u64
        }
    }
}

/// The service a user picks and its loss; ties go to the lowest index.
pub fn user_choice(user: &UserProfile, services: &ServiceSet) -> Result<(usize, f64)> {
    if services.is_empty() {
        return Err(Error::EmptyServiceSet);
    }
    let phi = user.preference.as_slice();
    let mut best = (0, f64::INFINITY);
    for (j, theta) in services.thetas().iter().enumerate() {
        let l = user.loss.eval(theta.as_slice(), phi)?;
        if l < best.1 {
            best = (j, l);
        }
    }
    Ok(best)
}

/// Evaluates every user against `services` without touching any ledger.
pub(crate) fn evaluate(pop: &Population, services: &ServiceSet) -> Result<FeedbackRound> {
    let pairs: Vec<(usize, f64)> = if pop.n() >= PARALLEL_THRESHOLD {
        pop.users()
            .par_iter()
            .map(|u| user_choice(u, services))
            .collect::<Result<_>>()?
    } else {
        pop.users()
            .iter()
            .map(|u| user_choice(u, services))
            .collect::<Result<_>>()?
    };
    let (choices, losses) = pairs.into_iter().unzip();
    Ok(FeedbackRound { losses, choices })
}

pub fn deploy(
    pop: &Population,
    services: &ServiceSet,
    ledger: &mut QueryLedger,
) -> Result<FeedbackRound> {
    let round = evaluate(pop, services)?;
    ledger.loss_observations += pop.n() as u64;
    Ok(round)
}

pub fn query_preference(
    pop: &Population,
    user_id: usize,
    ledger: &mut QueryLedger,
) -> Result<PreferenceVector> {
    let user = pop.user(user_id).ok_or(Error::UnknownUser(user_id))?;
    ledger.preference_queries.push(user_id);
    Ok(user.preference.clone())
}

/// Everything a seeding strategy may touch.
///
/// Implementations must not expose preferences other than through
/// `query_preference`.
pub trait Environment {
    fn n(&self) -> usize;

    /// `|γ(i)|` for each user. Group membership is public information.
    fn member_group_sizes(&self) -> Vec<usize>;

    fn deploy(&mut self, services: &ServiceSet) -> Result<FeedbackRound>;

    fn query_preference(&mut self, user_id: usize) -> Result<PreferenceVector>;

    fn ledger(&self) -> &QueryLedger;
}

/// Environment backed by a fully known population.
#[derive(Debug)]
pub struct PopulationEnv<'a> {
    pop: &'a Population,
    ledger: QueryLedger,
}

impl<'a> PopulationEnv<'a> {
    pub fn new(pop: &'a Population) -> Self {
        Self {
            pop,
            ledger: QueryLedger::default(),
        }
    }

    pub fn into_ledger(self) -> QueryLedger {
        self.ledger
    }
}

impl Environment for PopulationEnv<'_> {
    fn n(&self) -> usize {
        self.pop.n()
    }

    fn member_group_sizes(&self) -> Vec<usize> {
        self.pop.member_group_sizes()
    }

    fn deploy(&mut self, services: &ServiceSet) -> Result<FeedbackRound> {
        deploy(self.pop, services, &mut self.ledger)
    }

    fn query_preference(&mut self, user_id: usize) -> Result<PreferenceVector> {
        query_preference(self.pop, user_id, &mut self.ledger)
    }

    fn ledger(&self) -> &QueryLedger {
        &self.ledger
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossModel;

    fn two_users() -> Population {
        Population::uniform(vec![vec![0.0, 0.0], vec![2.0, 0.0]], LossModel::sq_euclidean(2)).unwrap()
    }

    #[test]
    fn choice_examples() {
        let pop = two_users();
        let u = &pop.users()[0];
        let s = ServiceSet::from_vectors(vec![vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(user_choice(u, &s).unwrap(), (1, 0.0));
        let tie = ServiceSet::from_vectors(vec![vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        assert_eq!(user_choice(u, &tie).unwrap(), (0, 1.0));
        let one = ServiceSet::from_vectors(vec![vec![3.0, 4.0]]).unwrap();
        assert_eq!(user_choice(u, &one).unwrap(), (0, 25.0));
        assert!(matches!(ServiceSet::from_vectors(vec![]), Err(Error::EmptyServiceSet)));
    }

    #[test]
    fn deploy_examples() {
        let pop = two_users();
        let mut ledger = QueryLedger::default();
        let s = ServiceSet::from_vectors(vec![vec![0.0, 0.0]]).unwrap();
        let round = deploy(&pop, &s, &mut ledger).unwrap();
        assert_eq!(round.losses(), &[0.0, 4.0]);
        assert_eq!(round.choices(), &[0, 0]);
        assert_eq!(ledger.loss_observations, 2);

        let all = ServiceSet::from_vectors(vec![vec![2.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let round = deploy(&pop, &all, &mut ledger).unwrap();
        assert_eq!(round.losses(), &[0.0, 0.0]);
        assert_eq!(round.choices(), &[1, 0]);
        assert_eq!(ledger.loss_observations, 4);
        assert_eq!(ledger.rounds(2), 2);
    }

    #[test]
    fn queries_are_append_only() {
        let pop = Population::uniform(
            (0..5).map(|i| vec![i as f64]).collect(),
            LossModel::MetricL2,
        )
        .unwrap();
        let mut ledger = QueryLedger::default();
        assert_eq!(query_preference(&pop, 3, &mut ledger).unwrap().as_slice(), &[3.0]);
        query_preference(&pop, 3, &mut ledger).unwrap();
        assert_eq!(ledger.preference_queries, vec![3, 3]);
        assert!(matches!(
            query_preference(&pop, 5, &mut ledger),
            Err(Error::UnknownUser(5))
        ));
        assert_eq!(ledger.preference_queries.len(), 2);
    }

    #[test]
    fn push_checks_dimension() {
        let mut s = ServiceSet::from_vectors(vec![vec![0.0, 0.0]]).unwrap();
        let bad = PreferenceVector::new(vec![1.0]).unwrap();
        assert!(s.push(bad, ServiceOrigin::External).is_err());
        assert_eq!(s.len(), 1);
    }
}
