//! Exhaustive answers for small instances: the optimal clustering, the
//! instance constants that scale the seeding guarantee, and exact
//! expectations over one seeding step.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::feedback::{self, ServiceOrigin, ServiceSet};
use crate::harness::metrics::objectives_from_losses;
use crate::losses::{refit_with, AlignmentMatrix, LossModel, RefitOptions};
use crate::population::{Population, PreferenceVector};

pub const MAX_N: usize = 14;
pub const MAX_K: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OptimalClustering {
    /// Blocks in order of their smallest member, members ascending.
    pub clusters: Vec<Vec<usize>>,
    pub centers: Vec<PreferenceVector>,
    pub total_loss: f64,
}

impl OptimalClustering {
    pub fn services(&self) -> ServiceSet {
        let origin = vec![ServiceOrigin::External; self.centers.len()];
        ServiceSet::new(self.centers.clone(), origin).expect("at least one block")
    }
}

/// Best services found by partition search under the fair objective.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FairOptimum {
    pub clusters: Vec<Vec<usize>>,
    pub centers: Vec<PreferenceVector>,
    /// Φ of the best candidate; an upper bound on the true minimum of Φ
    /// unless the refits happen to hit it.
    pub fair_objective: f64,
    /// Exact minimum over partitions of the group-weighted loss `G`.
    pub weighted_loss: f64,
}

fn members_of(mask: u32) -> impl Iterator<Item = usize> {
    (0..32).filter(move |i| mask & (1 << i) != 0)
}

/// Refit center and weighted loss of every block, computed on first use.
struct BlockCache<'a> {
    pop: &'a Population,
    weights: Vec<f64>,
    cells: Vec<Option<(f64, PreferenceVector)>>,
}

impl<'a> BlockCache<'a> {
    fn new(pop: &'a Population, weights: Vec<f64>) -> Self {
        Self {
            pop,
            weights,
            cells: vec![None; 1 << pop.n()],
        }
    }

    fn get(&mut self, mask: u32) -> Result<&(f64, PreferenceVector)> {
        let slot = mask as usize;
        if self.cells[slot].is_none() {
            let users = self.pop.users();
            let idx: Vec<usize> = members_of(mask).collect();
            let members: Vec<(&LossModel, &PreferenceVector)> =
                idx.iter().map(|&i| (&users[i].loss, &users[i].preference)).collect();
            let w: Vec<f64> = idx.iter().map(|&i| self.weights[i]).collect();
            let center = refit_with(&members, &w, RefitOptions::default())?;
            let cost = idx
                .iter()
                .map(|&i| self.weights[i] * users[i].loss.eval_unchecked(center.as_slice(), users[i].preference.as_slice()))
                .sum();
            self.cells[slot] = Some((cost, center));
        }
        Ok(self.cells[slot].as_ref().expect("filled above"))
    }
}

fn check_size(pop: &Population, k: usize) -> Result<()> {
    let n = pop.n();
    if k < 1 || k > n {
        return Err(Error::KOutOfRange { k, n });
    }
    if n > MAX_N || k > MAX_K {
        return Err(Error::InstanceTooLarge { n, k });
    }
    Ok(())
}

/// Visits every partition of `0..n` into at most `k` blocks, in lexicographic
/// order of restricted-growth strings.
fn for_each_partition(n: usize, k: usize, f: &mut dyn FnMut(&[u32]) -> Result<()>) -> Result<()> {
    fn rec(
        i: usize,
        n: usize,
        k: usize,
        blocks: &mut Vec<u32>,
        f: &mut dyn FnMut(&[u32]) -> Result<()>,
    ) -> Result<()> {
        if i == n {
            return f(blocks);
        }
        for b in 0..blocks.len() {
            blocks[b] |= 1 << i;
            rec(i + 1, n, k, blocks, f)?;
            blocks[b] &= !(1 << i);
        }
        if blocks.len() < k {
            blocks.push(1 << i);
            rec(i + 1, n, k, blocks, f)?;
            blocks.pop();
        }
        Ok(())
    }
    rec(0, n, k, &mut Vec::with_capacity(k), f)
}

fn masks_to_lists(masks: &[u32]) -> Vec<Vec<usize>> {
    masks.iter().map(|&m| members_of(m).collect()).collect()
}

/// Global optimum over all service sets of size at most `k`, found by
/// enumerating partitions and refitting each block.
///
/// Exact when refits are exact (squared Mahalanobis); otherwise accurate to
/// the refit tolerance.
pub fn brute_force_opt(pop: &Population, k: usize) -> Result<OptimalClustering> {
    check_size(pop, k)?;
    let mut cache = BlockCache::new(pop, vec![1.0; pop.n()]);
    let mut best: Option<(f64, Vec<u32>)> = None;
    for_each_partition(pop.n(), k, &mut |blocks| {
        let mut total = 0.0;
        for &m in blocks {
            total += cache.get(m)?.0;
        }
        if best.as_ref().is_none_or(|(b, _)| total < *b) {
            best = Some((total, blocks.to_vec()));
        }
        Ok(())
    })?;
    let (total_loss, masks) = best.expect("at least one partition");
    let centers = masks
        .iter()
        .map(|&m| Ok(cache.get(m)?.1.clone()))
        .collect::<Result<Vec<_>>>()?;
    Ok(OptimalClustering {
        clusters: masks_to_lists(&masks),
        centers,
        total_loss,
    })
}

/// Partition search for the fair objective. Every partition contributes two
/// candidate service sets: blocks refit with user weights `1/|γ(i)|`, and
/// blocks refit with unit weights. Candidates are scored by `Φ` with users
/// free to pick any candidate service, so the result is never worse on `Φ`
/// than the loss optimum.
pub fn brute_force_fair(pop: &Population, k: usize) -> Result<FairOptimum> {
    check_size(pop, k)?;
    let weights: Vec<f64> = pop.member_group_sizes().iter().map(|&s| 1.0 / s as f64).collect();
    let mut caches = [BlockCache::new(pop, weights), BlockCache::new(pop, vec![1.0; pop.n()])];
    let mut best: Option<(f64, Vec<u32>, usize)> = None;
    let mut best_weighted = f64::INFINITY;
    for_each_partition(pop.n(), k, &mut |blocks| {
        for (variant, cache) in caches.iter_mut().enumerate() {
            let mut weighted = 0.0;
            let mut centers = Vec::with_capacity(blocks.len());
            for &m in blocks {
                let (cost, center) = cache.get(m)?;
                weighted += cost;
                centers.push(center.clone());
            }
            if variant == 0 {
                best_weighted = best_weighted.min(weighted);
            }
            let services = ServiceSet::new(centers, vec![ServiceOrigin::External; blocks.len()])?;
            let round = feedback::evaluate(pop, &services)?;
            let phi = objectives_from_losses(pop, round.losses()).fair_objective;
            if best.as_ref().is_none_or(|(b, _, _)| phi < *b) {
                best = Some((phi, blocks.to_vec(), variant));
            }
        }
        Ok(())
    })?;
    let (fair_objective, masks, variant) = best.expect("at least one partition");
    let centers = masks
        .iter()
        .map(|&m| Ok(caches[variant].get(m)?.1.clone()))
        .collect::<Result<Vec<_>>>()?;
    Ok(FairOptimum {
        clusters: masks_to_lists(&masks),
        centers,
        fair_objective,
        weighted_loss: best_weighted,
    })
}

fn k_weighted(clusters: &[Vec<usize>], c: &AlignmentMatrix, w: impl Fn(usize) -> f64) -> Result<f64> {
    let mut k = 0.0f64;
    for block in clusters {
        if block.is_empty() {
            return Err(Error::EmptyCluster);
        }
        if let Some(&bad) = block.iter().find(|&&i| i >= c.n()) {
            return Err(Error::UnknownUser(bad));
        }
        let mut min_affinity = f64::INFINITY;
        let mut max_spread = 0.0f64;
        for &j in block {
            let affinity: f64 = block.iter().map(|&i| c.get(i, j) * w(i)).sum();
            let spread: f64 = block.iter().map(|&i| w(i) / c.get(i, j)).sum();
            min_affinity = min_affinity.min(affinity);
            max_spread = max_spread.max(spread);
        }
        k = k.max(4.0 / min_affinity * max_spread);
    }
    Ok(k)
}

/// `max_B [4 / min_j Σ_i c_ij] · [max_j Σ_i 1/c_ij]`, sums over `i, j ∈ B`.
pub fn k_opt_constant(clusters: &[Vec<usize>], c: &AlignmentMatrix) -> Result<f64> {
    k_weighted(clusters, c, |_| 1.0)
}

/// As [`k_opt_constant`] with every term weighted by `1/|γ(i)|`.
pub fn k_fair_constant(pop: &Population, clusters: &[Vec<usize>], c: &AlignmentMatrix) -> Result<f64> {
    let sizes = pop.member_group_sizes();
    if let Some(&bad) = clusters.iter().flatten().find(|&&i| i >= sizes.len()) {
        return Err(Error::UnknownUser(bad));
    }
    k_weighted(clusters, c, |i| 1.0 / sizes[i] as f64)
}

/// `K·(2 + ln k)·opt_loss`.
pub fn approximation_bound(k_const: f64, k: usize, opt_loss: f64) -> Result<f64> {
    if !(k_const > 0.0) || k < 1 || !(opt_loss >= 0.0) {
        return Err(Error::Validation(format!(
            "approximation bound needs K > 0, k >= 1, opt >= 0 (got {k_const}, {k}, {opt_loss})"
        )));
    }
    Ok(k_const * (2.0 + (k as f64).ln()) * opt_loss)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LemmaCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    /// The cluster already had zero loss, so the statement is empty.
    pub vacuous: bool,
}

const LEMMA_TOL: f64 = 1e-9;

impl LemmaCheck {
    fn new(lhs: f64, rhs: f64) -> Self {
        Self {
            lhs,
            rhs,
            holds: lhs <= rhs + LEMMA_TOL * rhs.abs().max(1.0),
            vacuous: false,
        }
    }
}

fn cluster_opt_loss(pop: &Population, cluster: &[usize]) -> Result<f64> {
    let users = pop.users();
    let members: Vec<(&LossModel, &PreferenceVector)> =
        cluster.iter().map(|&i| (&users[i].loss, &users[i].preference)).collect();
    let center = refit_with(&members, &vec![1.0; cluster.len()], RefitOptions::default())?;
    Ok(cluster
        .iter()
        .map(|&i| users[i].loss.eval_unchecked(center.as_slice(), users[i].preference.as_slice()))
        .sum())
}

fn validate_cluster(pop: &Population, cluster: &[usize], c: &AlignmentMatrix) -> Result<()> {
    if cluster.is_empty() {
        return Err(Error::EmptyCluster);
    }
    if c.n() != pop.n() {
        return Err(Error::DimensionMismatch {
            expected: pop.n(),
            got: c.n(),
        });
    }
    match cluster.iter().find(|&&i| i >= pop.n()) {
        Some(&bad) => Err(Error::UnknownUser(bad)),
        None => Ok(()),
    }
}

/// Loss of `i` against a service centered on `j`'s preference.
fn pair_loss(pop: &Population, i: usize, j: usize) -> f64 {
    let users = pop.users();
    users[i]
        .loss
        .eval_unchecked(users[j].preference.as_slice(), users[i].preference.as_slice())
}

/// First-pick lemma: a uniformly random member as the only center costs the
/// cluster at most `max_j (2/|B|) Σ_i 1/c_ij` times its optimal loss.
pub fn lemma_b1_check(pop: &Population, cluster: &[usize], c: &AlignmentMatrix) -> Result<LemmaCheck> {
    validate_cluster(pop, cluster, c)?;
    let b = cluster.len() as f64;
    let lhs = cluster
        .iter()
        .map(|&j| cluster.iter().map(|&i| pair_loss(pop, i, j)).sum::<f64>())
        .sum::<f64>()
        / b;
    let factor = cluster
        .iter()
        .map(|&j| 2.0 / b * cluster.iter().map(|&i| 1.0 / c.get(i, j)).sum::<f64>())
        .fold(0.0, f64::max);
    Ok(LemmaCheck::new(lhs, factor * cluster_opt_loss(pop, cluster)?))
}

/// Subsequent-pick lemma: with services already deployed, a member sampled in
/// proportion to its current loss as a new center costs the cluster at most
/// `4 / min_j (1/|B|)Σ_i c_ji · max_j (1/|B|)Σ_i 1/c_ij` times its optimal loss.
pub fn lemma_b2_check(
    pop: &Population,
    cluster: &[usize],
    preexisting: &ServiceSet,
    c: &AlignmentMatrix,
) -> Result<LemmaCheck> {
    validate_cluster(pop, cluster, c)?;
    let current = feedback::evaluate(pop, preexisting)?.into_losses();
    let mass: f64 = cluster.iter().map(|&i| current[i]).sum();
    if mass == 0.0 {
        return Ok(LemmaCheck {
            lhs: 0.0,
            rhs: 0.0,
            holds: true,
            vacuous: true,
        });
    }
    let lhs: f64 = cluster
        .iter()
        .map(|&j| {
            let after: f64 = cluster.iter().map(|&i| current[i].min(pair_loss(pop, i, j))).sum();
            current[j] / mass * after
        })
        .sum();
    let b = cluster.len() as f64;
    let min_affinity = cluster
        .iter()
        .map(|&j| cluster.iter().map(|&i| c.get(j, i)).sum::<f64>() / b)
        .fold(f64::INFINITY, f64::min);
    let max_spread = cluster
        .iter()
        .map(|&j| cluster.iter().map(|&i| 1.0 / c.get(i, j)).sum::<f64>() / b)
        .fold(0.0, f64::max);
    Ok(LemmaCheck::new(
        lhs,
        4.0 / min_affinity * max_spread * cluster_opt_loss(pop, cluster)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(points: &[f64]) -> Population {
        Population::uniform(points.iter().map(|p| vec![*p]).collect(), LossModel::sq_euclidean(1)).unwrap()
    }

    #[test]
    fn zero_one_ten() {
        let opt = brute_force_opt(&line(&[0.0, 1.0, 10.0]), 2).unwrap();
        assert_eq!(opt.clusters, vec![vec![0, 1], vec![2]]);
        assert_eq!(opt.total_loss, 0.5);
        assert_eq!(opt.centers[0].as_slice(), &[0.5]);
        assert_eq!(opt.centers[1].as_slice(), &[10.0]);
    }

    #[test]
    fn k_equals_n_and_k_one() {
        let pop = line(&[0.0, 3.0, 4.0, 9.0]);
        let all = brute_force_opt(&pop, 4).unwrap();
        assert_eq!(all.total_loss, 0.0);
        assert_eq!(all.clusters, vec![vec![0], vec![1], vec![2], vec![3]]);
        let one = brute_force_opt(&pop, 1).unwrap();
        assert_eq!(one.clusters, vec![vec![0, 1, 2, 3]]);
        assert_eq!(one.centers[0].as_slice(), &[4.0]);
    }

    #[test]
    fn partition_counts_match_stirling_sums() {
        // S(6,1)+S(6,2)+S(6,3) = 1 + 31 + 90.
        let mut count = 0;
        for_each_partition(6, 3, &mut |_| {
            count += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(count, 122);
    }

    #[test]
    fn ties_go_to_the_lexicographically_first_partition() {
        // {0,1} then {2}, or {0} then {1,2}: equal cost.
        let opt = brute_force_opt(&line(&[0.0, 1.0, 2.0]), 2).unwrap();
        assert_eq!(opt.clusters, vec![vec![0, 1], vec![2]]);
    }

    #[test]
    fn guard() {
        let pop = line(&[0.0; 15]);
        assert!(matches!(brute_force_opt(&pop, 2), Err(Error::InstanceTooLarge { .. })));
        let pop = line(&[0.0; 6]);
        assert!(matches!(brute_force_opt(&pop, 5), Err(Error::InstanceTooLarge { .. })));
    }

    #[test]
    fn k_constant_examples() {
        let c = AlignmentMatrix::from_fn(3, |i, j| if (i, j) == (0, 1) { 0.5 } else { 0.25 }).unwrap();
        assert_eq!(k_opt_constant(&[vec![0, 1], vec![2]], &c).unwrap(), 8.0);
        assert_eq!(k_opt_constant(&[vec![2]], &c).unwrap(), 4.0);
        assert!(matches!(k_opt_constant(&[vec![]], &c), Err(Error::EmptyCluster)));
    }

    #[test]
    fn uniform_constant_approaches_four_over_c_squared() {
        // With the unit diagonal a block of size b gives
        // 4(1 + (b−1)/c) / (1 + (b−1)c), which tends to 4/c² from below.
        let cc = 0.25;
        let mut last = 0.0;
        for b in [2usize, 8, 64, 1024] {
            let c = AlignmentMatrix::uniform(b, cc).unwrap();
            let k = k_opt_constant(&[(0..b).collect()], &c).unwrap();
            let bf = (b - 1) as f64;
            assert!((k - 4.0 * (1.0 + bf / cc) / (1.0 + bf * cc)).abs() < 1e-9 * k);
            assert!(k > last && k < 4.0 / (cc * cc));
            last = k;
        }
        assert!(4.0 / (cc * cc) - last < 0.25);
    }

    #[test]
    fn k_fair_examples() {
        let pop = line(&[0.0, 1.0, 5.0]);
        let c = AlignmentMatrix::uniform(3, 0.5).unwrap();
        let pair = pop.with_groups(&[0, 0, 1]).unwrap();
        assert_eq!(k_fair_constant(&pair, &[vec![0, 1]], &c).unwrap(), 8.0);
        let singletons = pop.with_groups(&[0, 1, 2]).unwrap();
        let clusters = [vec![0, 1], vec![2]];
        assert_eq!(
            k_fair_constant(&singletons, &clusters, &c).unwrap(),
            k_opt_constant(&clusters, &c).unwrap()
        );
    }

    #[test]
    fn bound_examples() {
        assert_eq!(approximation_bound(3.0, 1, 2.0).unwrap(), 12.0);
        let b = approximation_bound(8.0, 2, 0.5).unwrap();
        assert!((b - 10.772588722239782).abs() < 1e-12);
        assert_eq!(approximation_bound(8.0, 3, 0.0).unwrap(), 0.0);
        assert!(approximation_bound(0.0, 3, 1.0).is_err());
    }

    #[test]
    fn first_pick_pair_example() {
        let pop = line(&[0.0, 1.0]);
        let c = AlignmentMatrix::from_population(&pop).unwrap();
        let r = lemma_b1_check(&pop, &[0, 1], &c).unwrap();
        assert_eq!(r.lhs, 1.0);
        assert_eq!(r.rhs, 1.5);
        assert!(r.holds);
        let single = lemma_b1_check(&pop, &[1], &c).unwrap();
        assert_eq!(single.lhs, 0.0);
        assert!(single.holds);
    }

    #[test]
    fn later_pick_examples() {
        let pop = line(&[0.0, 1.0, 50.0]);
        let c = AlignmentMatrix::from_population(&pop).unwrap();
        let covered = ServiceSet::from_vectors(vec![vec![0.0], vec![1.0]]).unwrap();
        let r = lemma_b2_check(&pop, &[0, 1], &covered, &c).unwrap();
        assert!(r.vacuous && r.holds);
        let far = ServiceSet::from_vectors(vec![vec![50.0]]).unwrap();
        let r = lemma_b2_check(&pop, &[0, 1], &far, &c).unwrap();
        assert!(!r.vacuous && r.holds, "{r:?}");
        // Picks 0 or 1 with probability 2500/4901 and 2401/4901; each leaves loss 1.
        assert!((r.lhs - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fair_search_on_imbalanced_groups() {
        let pop = Population::from_parts(
            vec![vec![0.0], vec![0.0], vec![0.0], vec![10.0]],
            vec![LossModel::sq_euclidean(1); 4],
            vec![0, 0, 0, 1],
        )
        .unwrap();
        let f = brute_force_fair(&pop, 1).unwrap();
        // One service at the 1/|γ|-weighted mean: (3·0/3 + 10) / 2 = 5.
        assert_eq!(f.centers[0].as_slice(), &[5.0]);
        assert_eq!(f.fair_objective, 25.0);
        assert_eq!(f.weighted_loss, 50.0);
        let f2 = brute_force_fair(&pop, 2).unwrap();
        assert_eq!(f2.fair_objective, 0.0);
    }
}
