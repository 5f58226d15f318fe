//! Linear-regression subpopulations with noiseless scores. Each group's
//! empirical squared error is a quadratic form in `θ − φ` under the sample
//! covariance, so it plugs straight into the squared Mahalanobis family.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, SpdMatrix};
use crate::losses::LossModel;
use crate::population::{Population, PreferenceVector};
use crate::rng::{self, Rng};

/// Law of the standardized feature coordinates before mixing by `cov^{1/2}`.
/// Every variant has zero mean and unit variance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureDist {
    Gaussian,
    Rademacher,
    /// `±1/√density` with probability `density`, otherwise 0.
    SparseRademacher { density: f64 },
}

impl FeatureDist {
    fn validate(&self) -> Result<()> {
        match self {
            FeatureDist::SparseRademacher { density } if !(*density > 0.0 && *density <= 1.0) => Err(
                Error::Validation(format!("density must lie in (0, 1], got {density}")),
            ),
            _ => Ok(()),
        }
    }

    fn sample(&self, rng: &mut Rng) -> f64 {
        match *self {
            FeatureDist::Gaussian => StandardNormal.sample(rng),
            FeatureDist::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            FeatureDist::SparseRademacher { density } => {
                if rng.random::<f64>() < density {
                    let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    s / density.sqrt()
                } else {
                    0.0
                }
            }
        }
    }

    /// Smallest `s` with `E exp(λz) ≤ exp(s·λ²/2)` for all λ, found on a grid.
    pub fn variance_proxy(&self) -> f64 {
        let log_mgf: Box<dyn Fn(f64) -> f64> = match *self {
            FeatureDist::Gaussian => return 1.0,
            FeatureDist::Rademacher => Box::new(ln_cosh),
            FeatureDist::SparseRademacher { density: p } => {
                if p == 1.0 {
                    Box::new(ln_cosh)
                } else {
                    Box::new(move |l: f64| {
                        let a = (1.0 - p).ln();
                        let b = p.ln() + ln_cosh(l / p.sqrt());
                        let m = a.max(b);
                        m + ((a - m).exp() + (b - m).exp()).ln()
                    })
                }
            }
        };
        (0..4000)
            .map(|i| 10f64.powf(-3.0 + 5.0 * i as f64 / 3999.0))
            .map(|l| 2.0 * log_mgf(l) / (l * l))
            .fold(0.0, f64::max)
    }
}

fn ln_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// One subpopulation: features `X` (`n_i × d`), scores `y = Xφ`.
#[derive(Clone, Debug, PartialEq)]
pub struct Subpopulation {
    features: DMatrix<f64>,
    scores: Vec<f64>,
    true_phi: PreferenceVector,
    true_cov: SpdMatrix,
    sigma2: f64,
}

impl Subpopulation {
    /// Builds from explicit feature rows; scores are computed from `phi`.
    pub fn from_design(rows: &[Vec<f64>], phi: PreferenceVector, cov: SpdMatrix, sigma2: f64) -> Result<Self> {
        let d = phi.dim();
        if cov.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: cov.dim(),
            });
        }
        if rows.len() < d {
            return Err(Error::Validation(format!("need at least d = {d} rows, got {}", rows.len())));
        }
        if let Some(r) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: r.len(),
            });
        }
        let features = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
        if column_rank(&features) < d {
            return Err(Error::RankDeficient);
        }
        let scores = (&features * DVector::from_column_slice(phi.as_slice())).iter().copied().collect();
        Ok(Self {
            features,
            scores,
            true_phi: phi,
            true_cov: cov,
            sigma2,
        })
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn true_phi(&self) -> &PreferenceVector {
        &self.true_phi
    }

    pub fn true_cov(&self) -> &SpdMatrix {
        &self.true_cov
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// `XᵀX / n_i`.
    pub fn empirical_covariance(&self) -> Result<SpdMatrix> {
        let x = &self.features;
        SpdMatrix::new(x.transpose() * x / self.n() as f64).map_err(|_| Error::RankDeficient)
    }

    /// The loss this subpopulation reveals, as a loss model.
    pub fn loss_model(&self) -> Result<LossModel> {
        Ok(LossModel::SqMahalanobis(self.empirical_covariance()?))
    }
}

fn column_rank(x: &DMatrix<f64>) -> usize {
    let sv = x.clone().svd(false, false).singular_values;
    let max = sv.iter().copied().fold(0.0, f64::max);
    let cutoff = max * f64::EPSILON * x.nrows().max(x.ncols()) as f64;
    sv.iter().filter(|s| **s > cutoff).count()
}

/// Draws `n_i` feature rows with covariance `cov`.
///
/// A rank-deficient draw is retried once with a derived seed.
pub fn sample_subpopulation(
    phi: &PreferenceVector,
    cov: &SpdMatrix,
    n_i: usize,
    dist: FeatureDist,
    rng_seed: u64,
) -> Result<Subpopulation> {
    dist.validate()?;
    let d = phi.dim();
    if cov.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: cov.dim(),
        });
    }
    if n_i < d {
        return Err(Error::Validation(format!("n_i = {n_i} is below d = {d}")));
    }
    let root = cov
        .as_matrix()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("feature covariance".into()))?
        .l();
    let sigma2 = dist.variance_proxy() * cov.eigenvalues().last().copied().unwrap_or(1.0);
    for attempt in 0..2 {
        let mut rng = rng::from_seed(if attempt == 0 { rng_seed } else { rng::derive(rng_seed, 1) });
        let z = DMatrix::from_fn(n_i, d, |_, _| dist.sample(&mut rng));
        let features = z * root.transpose();
        if column_rank(&features) < d {
            continue;
        }
        let scores = (&features * DVector::from_column_slice(phi.as_slice())).iter().copied().collect();
        return Ok(Subpopulation {
            features,
            scores,
            true_phi: phi.clone(),
            true_cov: cov.clone(),
            sigma2,
        });
    }
    Err(Error::RankDeficient)
}

/// `(1/n_i) Σ (θᵀx − y)²`.
pub fn empirical_loss(sub: &Subpopulation, theta: &PreferenceVector) -> Result<f64> {
    if theta.dim() != sub.dim() {
        return Err(Error::DimensionMismatch {
            expected: sub.dim(),
            got: theta.dim(),
        });
    }
    let pred = &sub.features * DVector::from_column_slice(theta.as_slice());
    Ok(pred.iter().zip(&sub.scores).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / sub.n() as f64)
}

/// Least-squares preference recovered from the observed scores.
pub fn empirical_preference(sub: &Subpopulation) -> Result<PreferenceVector> {
    if column_rank(&sub.features) < sub.dim() {
        return Err(Error::RankDeficient);
    }
    let svd = sub.features.clone().svd(true, true);
    let y = DVector::from_column_slice(&sub.scores);
    let x = svd.solve(&y, 0.0).map_err(|e| Error::Validation(e.to_string()))?;
    PreferenceVector::new(x.iter().copied().collect())
}

/// `½·min{λ_min(Σ̂_i, Σ̂_j), λ_min(Σ̂_j, Σ̂_i)}`.
pub fn empirical_alignment(sub_i: &Subpopulation, sub_j: &Subpopulation) -> Result<f64> {
    if sub_i.dim() != sub_j.dim() {
        return Err(Error::DimensionMismatch {
            expected: sub_i.dim(),
            got: sub_j.dim(),
        });
    }
    let a = sub_i.empirical_covariance()?;
    let b = sub_j.empirical_covariance()?;
    let ab = linalg::min_generalized_eigenvalue(&a, &b)?;
    let ba = linalg::min_generalized_eigenvalue(&b, &a)?;
    Ok(0.5 * ab.min(ba))
}

/// One group per subpopulation, each revealing its empirical loss.
pub fn population_from_subpopulations(subs: &[Subpopulation]) -> Result<Population> {
    let phis = subs.iter().map(|s| s.true_phi.as_slice().to_vec()).collect();
    let models = subs.iter().map(Subpopulation::loss_model).collect::<Result<Vec<_>>>()?;
    Population::from_parts(phis, models, (0..subs.len()).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub cov: SpdMatrix,
    pub phi: Vec<f64>,
    pub dist: FeatureDist,
    /// Services at which the empirical and expected losses are compared.
    pub thetas: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub config: usize,
    pub n_i: usize,
    pub sigma2: f64,
    pub max_rel_error: f64,
}

/// For every config and sample size, the largest `|L̂ − L| / L` over the
/// theta grid and `trials` independent draws. `L = 0` counts as error 0.
pub fn concentration_sweep(
    configs: &[SweepConfig],
    n_grid: &[usize],
    trials: usize,
    rng_seed: u64,
) -> Result<Vec<SweepRow>> {
    if configs.is_empty() || n_grid.is_empty() || trials == 0 {
        return Err(Error::Validation("sweep needs configs, sample sizes and trials".into()));
    }
    let cells: Vec<(usize, usize)> = (0..configs.len())
        .flat_map(|c| n_grid.iter().map(move |&n| (c, n)))
        .collect();
    cells
        .par_iter()
        .enumerate()
        .map(|(cell, &(c, n))| {
            let cfg = &configs[c];
            let phi = PreferenceVector::new(cfg.phi.clone())?;
            let thetas = cfg
                .thetas
                .iter()
                .map(|t| PreferenceVector::new(t.clone()))
                .collect::<Result<Vec<_>>>()?;
            let mut worst = 0.0f64;
            let mut sigma2 = cfg.dist.variance_proxy();
            for trial in 0..trials {
                let seed = rng::derive(rng_seed, (cell * trials + trial) as u64);
                let sub = sample_subpopulation(&phi, &cfg.cov, n, cfg.dist, seed)?;
                sigma2 = sub.sigma2;
                for t in &thetas {
                    let r = linalg::sub(t.as_slice(), phi.as_slice());
                    let expected = cfg.cov.quad_form(&r);
                    if expected == 0.0 {
                        continue;
                    }
                    let observed = empirical_loss(&sub, t)?;
                    worst = worst.max((observed - expected).abs() / expected);
                }
            }
            Ok(SweepRow {
                config: c,
                n_i: n,
                sigma2,
                max_rel_error: worst,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> PreferenceVector {
        PreferenceVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn design_examples() {
        let id1 = SpdMatrix::identity(1);
        let s = Subpopulation::from_design(&[vec![1.0], vec![2.0]], pv(&[3.0]), id1.clone(), 1.0).unwrap();
        assert_eq!(s.scores(), &[3.0, 6.0]);
        let s = Subpopulation::from_design(&[vec![1.0], vec![1.0]], pv(&[0.0]), id1.clone(), 1.0).unwrap();
        assert_eq!(empirical_loss(&s, &pv(&[2.0])).unwrap(), 4.0);
        assert_eq!(empirical_loss(&s, &pv(&[0.0])).unwrap(), 0.0);
        let double = Subpopulation::from_design(&[vec![2.0], vec![2.0]], pv(&[0.0]), id1, 1.0).unwrap();
        assert_eq!(empirical_loss(&double, &pv(&[2.0])).unwrap(), 16.0);
        assert!(empirical_loss(&s, &pv(&[1.0, 1.0])).is_err());
    }

    #[test]
    fn identity_design_recovers_scores() {
        let s = Subpopulation::from_design(
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
            pv(&[3.0, 5.0]),
            SpdMatrix::identity(2),
            1.0,
        )
        .unwrap();
        let p = empirical_preference(&s).unwrap();
        assert!((p.as_slice()[0] - 3.0).abs() < 1e-12 && (p.as_slice()[1] - 5.0).abs() < 1e-12);
        assert!(matches!(
            Subpopulation::from_design(&[vec![1.0, 1.0], vec![2.0, 2.0]], pv(&[0.0, 0.0]), SpdMatrix::identity(2), 1.0),
            Err(Error::RankDeficient)
        ));
    }

    #[test]
    fn sampled_subpopulations_recover_phi() {
        let cov = SpdMatrix::from_rows(&[vec![2.0, 0.5, 0.0], vec![0.5, 1.0, 0.2], vec![0.0, 0.2, 0.7]]).unwrap();
        let phi = pv(&[1.0, -2.0, 0.5]);
        for (seed, n) in [(1, 3), (2, 10), (3, 200)] {
            for dist in [FeatureDist::Gaussian, FeatureDist::Rademacher] {
                // Square ±1 designs are singular too often to demand full rank.
                if n == 3 && dist == FeatureDist::Rademacher {
                    continue;
                }
                let s = sample_subpopulation(&phi, &cov, n, dist, seed).unwrap();
                let p = empirical_preference(&s).unwrap();
                for (a, b) in p.as_slice().iter().zip(phi.as_slice()) {
                    assert!((a - b).abs() < 1e-9);
                }
            }
        }
        assert!(sample_subpopulation(&phi, &cov, 2, FeatureDist::Gaussian, 0).is_err());
    }

    #[test]
    fn empirical_loss_is_quadratic_form() {
        let cov = SpdMatrix::from_diagonal(&[1.0, 3.0]).unwrap();
        let phi = pv(&[0.5, 1.5]);
        let s = sample_subpopulation(&phi, &cov, 40, FeatureDist::Gaussian, 5).unwrap();
        let sigma = s.empirical_covariance().unwrap();
        for theta in [[0.0, 0.0], [2.0, -1.0], [0.5, 1.5], [10.0, 3.0]] {
            let r = linalg::sub(&theta, phi.as_slice());
            let direct = empirical_loss(&s, &pv(&theta)).unwrap();
            assert!((direct - sigma.quad_form(&r)).abs() <= 1e-10 * direct.max(1.0));
        }
    }

    #[test]
    fn large_sample_covariance_near_truth() {
        let s = sample_subpopulation(&pv(&[0.0, 0.0]), &SpdMatrix::identity(2), 40_000, FeatureDist::Gaussian, 8).unwrap();
        let c = s.empirical_covariance().unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((c.as_matrix()[(i, j)] - target).abs() < 5.0 / 200.0);
            }
        }
    }

    #[test]
    fn alignment_examples() {
        let phi = pv(&[0.0, 0.0]);
        let rows = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0], vec![0.0, -1.0]];
        let id = SpdMatrix::identity(2);
        let a = Subpopulation::from_design(&rows, phi.clone(), id.clone(), 1.0).unwrap();
        assert!((empirical_alignment(&a, &a).unwrap() - 0.5).abs() < 1e-12);
        // Σ̂ = I/2 for `a` and I for `b`, a factor of two apart.
        let s2 = 2f64.sqrt();
        let rows2: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|x| x * s2).collect()).collect();
        let b = Subpopulation::from_design(&rows2, phi, id, 1.0).unwrap();
        let c = empirical_alignment(&b, &a).unwrap();
        assert!((c - 0.25).abs() < 1e-12);
        assert_eq!(c, empirical_alignment(&a, &b).unwrap());
    }

    #[test]
    fn variance_proxies() {
        assert_eq!(FeatureDist::Gaussian.variance_proxy(), 1.0);
        assert!((FeatureDist::Rademacher.variance_proxy() - 1.0).abs() < 1e-5);
        let mut last = 1.0 - 1e-5;
        for p in [0.2, 0.1, 0.05] {
            let v = FeatureDist::SparseRademacher { density: p }.variance_proxy();
            assert!(v > last, "{p}: {v}");
            last = v;
        }
        assert!(FeatureDist::SparseRademacher { density: 0.0 }.validate().is_err());
    }
}
