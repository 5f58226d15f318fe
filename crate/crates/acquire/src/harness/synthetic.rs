use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::Map;

use crate::error::{Error, Result};
use crate::linalg;
use crate::losses::{LossFamily, LossModel, LossSpec};
use crate::population::{Population, UserProfile, PreferenceVector};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum GroupScheme {
    /// One group per planted cluster.
    ByCluster,
    /// `m` groups of near-equal size, members drawn at random.
    Random { m: usize },
    /// Two groups; the minority is `ratio` times smaller and made of the
    /// highest-numbered users, which sit in the last cluster.
    Imbalanced { ratio: f64 },
}

fn default_loss() -> LossSpec {
    LossSpec {
        family: "sq_mahalanobis".into(),
        params: Map::new(),
    }
}

fn default_groups() -> GroupScheme {
    GroupScheme::ByCluster
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub num_clusters: usize,
    pub users_per_cluster: usize,
    pub d: usize,
    /// Distance between any two cluster centers.
    pub separation: f64,
    /// Every user gets this loss; defaults to squared Euclidean.
    #[serde(default = "default_loss")]
    pub loss: LossSpec,
    #[serde(default = "default_groups")]
    pub groups: GroupScheme,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mixture {
    pub population: Population,
    /// Planted cluster of each user.
    pub labels: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
}

/// Vertices of a regular simplex with the given edge length, embedded in
/// `d ≥ K − 1` dimensions and centered at the origin.
pub fn simplex_vertices(count: usize, d: usize, edge: f64) -> Result<Vec<Vec<f64>>> {
    if count == 0 {
        return Err(Error::Validation("need at least one cluster".into()));
    }
    if d + 1 < count {
        return Err(Error::Validation(format!(
            "{count} equidistant centers need d >= {}, got {d}",
            count - 1
        )));
    }
    // Helmert basis of the sum-zero hyperplane: e_i − e_j has length √2.
    let scale = edge / 2f64.sqrt();
    Ok((0..count)
        .map(|i| {
            let mut v = vec![0.0; d];
            for (r, slot) in v.iter_mut().enumerate().take(count - 1) {
                let k = (r + 1) as f64;
                let norm = (k * (k + 1.0)).sqrt();
                *slot = scale
                    * if i <= r {
                        1.0 / norm
                    } else if i == r + 1 {
                        -k / norm
                    } else {
                        0.0
                    };
            }
            v
        })
        .collect())
}

/// Planted mixture: simplex cluster centers plus unit Gaussian noise per user.
/// Cosine users are projected onto the unit sphere.
pub fn synthetic_mixture(spec: &MixtureSpec, rng_seed: u64) -> Result<Mixture> {
    if spec.users_per_cluster == 0 || spec.d == 0 {
        return Err(Error::Validation("cluster size and dimension must be positive".into()));
    }
    if !(spec.separation >= 0.0 && spec.separation.is_finite()) {
        return Err(Error::Validation(format!("separation must be >= 0, got {}", spec.separation)));
    }
    let loss = LossModel::from_spec(&spec.loss, spec.d)?;
    let centers = simplex_vertices(spec.num_clusters, spec.d, spec.separation)?;
    let n = spec.num_clusters * spec.users_per_cluster;
    let mut rng = rng::from_seed(rng_seed);

    let mut phis = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..spec.users_per_cluster {
            let mut phi: Vec<f64> = center
                .iter()
                .map(|x| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    x + z
                })
                .collect();
            if loss.family() == LossFamily::Cosine {
                let norm = linalg::norm(&phi);
                phi.iter_mut().for_each(|x| *x /= norm);
            }
            phis.push(phi);
            labels.push(c);
        }
    }

    let groups: Vec<usize> = match &spec.groups {
        GroupScheme::ByCluster => labels.clone(),
        GroupScheme::Random { m } => {
            if *m == 0 || *m > n {
                return Err(Error::Validation(format!("random groups need 1 <= m <= n, got {m}")));
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let mut g = vec![0; n];
            for (pos, &user) in order.iter().enumerate() {
                g[user] = pos % m;
            }
            g
        }
        GroupScheme::Imbalanced { ratio } => {
            if !(*ratio >= 1.0) || n < 2 {
                return Err(Error::Validation(format!(
                    "imbalanced groups need ratio >= 1 and n >= 2, got ratio {ratio}"
                )));
            }
            let minority = ((n as f64 / (ratio + 1.0)).round() as usize).clamp(1, n - 1);
            (0..n).map(|i| usize::from(i >= n - minority)).collect()
        }
    };

    let m = groups.iter().copied().max().map_or(0, |g| g + 1);
    let users = phis
        .into_iter()
        .zip(&groups)
        .enumerate()
        .map(|(user_id, (phi, &group_id))| {
            Ok(UserProfile {
                user_id,
                preference: PreferenceVector::new(phi)?,
                loss: loss.clone(),
                group_id,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let population = Population::new(users, (0..m).map(|g| g.to_string()).collect())?;
    Ok(Mixture {
        population,
        labels,
        centers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(k: usize, per: usize, d: usize, sep: f64) -> MixtureSpec {
        MixtureSpec {
            num_clusters: k,
            users_per_cluster: per,
            d,
            separation: sep,
            loss: default_loss(),
            groups: GroupScheme::ByCluster,
        }
    }

    #[test]
    fn simplex_is_equilateral() {
        for k in 1..6 {
            let v = simplex_vertices(k, k + 1, 7.0).unwrap();
            for i in 0..k {
                for j in (i + 1)..k {
                    let dist = linalg::norm(&linalg::sub(&v[i], &v[j]));
                    assert!((dist - 7.0).abs() < 1e-12, "{k}: {dist}");
                }
            }
        }
        assert!(simplex_vertices(4, 2, 1.0).is_err());
    }

    #[test]
    fn zero_separation_single_center() {
        let m = synthetic_mixture(&spec(3, 5, 2, 0.0), 1).unwrap();
        assert!(m.centers.iter().all(|c| c.iter().all(|x| *x == 0.0)));
        assert_eq!(m.population.n(), 15);
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let a = synthetic_mixture(&spec(3, 4, 3, 5.0), 9).unwrap();
        let b = synthetic_mixture(&spec(3, 4, 3, 5.0), 9).unwrap();
        assert_eq!(a.population.to_jsonl(), b.population.to_jsonl());
        let c = synthetic_mixture(&spec(3, 4, 3, 5.0), 10).unwrap();
        assert_ne!(a.population.to_jsonl(), c.population.to_jsonl());
    }

    #[test]
    fn group_schemes() {
        let mut s = spec(2, 10, 2, 10.0);
        s.groups = GroupScheme::Imbalanced { ratio: 9.0 };
        let pop = synthetic_mixture(&s, 3).unwrap().population;
        assert_eq!(pop.groups()[0].len(), 18);
        assert_eq!(pop.groups()[1], vec![18, 19]);
        s.groups = GroupScheme::Random { m: 3 };
        let pop = synthetic_mixture(&s, 3).unwrap().population;
        let sizes: Vec<usize> = pop.groups().iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![7, 7, 6]);
        s.groups = GroupScheme::Random { m: 0 };
        assert!(synthetic_mixture(&s, 3).is_err());
    }

    #[test]
    fn cosine_users_on_sphere() {
        let mut s = spec(2, 5, 3, 4.0);
        s.loss = LossSpec {
            family: "cosine".into(),
            params: Map::new(),
        };
        let pop = synthetic_mixture(&s, 2).unwrap().population;
        for u in pop.users() {
            assert!((linalg::norm(u.preference.as_slice()) - 1.0).abs() < 1e-12);
        }
        s.loss.family = "nope".into();
        assert!(synthetic_mixture(&s, 2).is_err());
    }
}
