use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::Result;
use crate::linalg::{self, SpdMatrix};
use crate::linreg::{FeatureDist, SweepConfig};
use crate::losses::{alignment_constant, check_assumptions, LipschitzSc, LossFamily, LossModel};
use crate::population::PreferenceVector;
use crate::rng::{self, Rng};

fn gaussian_vec(d: usize, scale: f64, rng: &mut Rng) -> Vec<f64> {
    (0..d)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

fn random_rotation(d: usize, rng: &mut Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z
    });
    g.qr().q()
}

/// SPD matrix with eigenvalues drawn uniformly from `[lo, hi]`, randomly rotated.
pub fn random_spd(d: usize, lo: f64, hi: f64, rng: &mut Rng) -> Result<SpdMatrix> {
    let q = random_rotation(d, rng);
    let eig = DVector::from_fn(d, |_, _| rng.random_range(lo..=hi));
    let m = &q * DMatrix::from_diagonal(&eig) * q.transpose();
    SpdMatrix::new((&m + m.transpose()) * 0.5)
}

/// Two random models of one family. Huber pairs share their width so the
/// textbook constant applies.
pub fn random_model_pair(family: LossFamily, d: usize, rng: &mut Rng) -> Result<(LossModel, LossModel)> {
    Ok(match family {
        LossFamily::SqMahalanobis => (
            LossModel::SqMahalanobis(random_spd(d, 0.2, 5.0, rng)?),
            LossModel::SqMahalanobis(random_spd(d, 0.2, 5.0, rng)?),
        ),
        LossFamily::Mahalanobis => (
            LossModel::Mahalanobis(random_spd(d, 0.2, 5.0, rng)?),
            LossModel::Mahalanobis(random_spd(d, 0.2, 5.0, rng)?),
        ),
        LossFamily::Huber => {
            let delta = 10f64.powf(rng.random_range(-1.0..=1.0));
            (LossModel::huber(delta)?, LossModel::huber(delta)?)
        }
        LossFamily::Cosine => (LossModel::Cosine, LossModel::Cosine),
        LossFamily::MetricL2 => (LossModel::MetricL2, LossModel::MetricL2),
        LossFamily::LipschitzSc => {
            let mut one = || -> Result<LossModel> {
                let l = rng.random_range(1.0..=3.0);
                let mu = l * rng.random_range(0.2..=1.0);
                let anchor = random_spd(d, mu * mu, l * l, rng)?;
                Ok(LossModel::LipschitzSc(LipschitzSc::new(l, mu, anchor)?))
            };
            (one()?, one()?)
        }
    })
}

fn random_preference(model: &LossModel, d: usize, rng: &mut Rng) -> Result<PreferenceVector> {
    let mut v = gaussian_vec(d, 2.0, rng);
    if matches!(model, LossModel::Cosine) {
        let n = linalg::norm(&v).max(1e-300);
        v.iter_mut().for_each(|x| *x /= n);
    }
    PreferenceVector::new(v)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssumptionSweep {
    pub family: &'static str,
    pub pairs: usize,
    pub samples_per_pair: usize,
    pub inflate: f64,
    /// Pairs with at least one violated inequality.
    pub failing_pairs: usize,
    pub total_violations: usize,
    pub max_violation: f64,
}

/// Checks the pairwise triangle inequalities on `pairs` random user pairs of
/// one family, each with its computed constant multiplied by `inflate`.
pub fn assumption_sweep(
    family: LossFamily,
    d: usize,
    pairs: usize,
    samples_per_pair: usize,
    inflate: f64,
    rng_seed: u64,
) -> Result<AssumptionSweep> {
    let mut rng = rng::from_seed(rng_seed);
    let mut out = AssumptionSweep {
        family: family.name(),
        pairs,
        samples_per_pair,
        inflate,
        failing_pairs: 0,
        total_violations: 0,
        max_violation: f64::NEG_INFINITY,
    };
    for p in 0..pairs {
        let (mi, mj) = random_model_pair(family, d, &mut rng)?;
        let (pi, pj) = (random_preference(&mi, d, &mut rng)?, random_preference(&mj, d, &mut rng)?);
        // Half the pairs sit close together, where the constants are tightest.
        let pj = if p % 2 == 0 {
            pj
        } else {
            let mut v: Vec<f64> = pi.as_slice().iter().zip(gaussian_vec(d, 0.05, &mut rng)).map(|(a, b)| a + b).collect();
            if matches!(mj, LossModel::Cosine) {
                let n = linalg::norm(&v);
                v.iter_mut().for_each(|x| *x /= n);
            }
            PreferenceVector::new(v)?
        };
        let c = alignment_constant(&mi, &mj)? * inflate;
        let report = check_assumptions(&mi, &pi, &mj, &pj, c, samples_per_pair, rng::derive(rng_seed, p as u64));
        out.max_violation = out.max_violation.max(report.max_violation);
        out.total_violations += report.violations.len();
        out.failing_pairs += usize::from(!report.holds());
    }
    Ok(out)
}

/// Five two-dimensional regression settings spanning covariance shape and
/// feature tails, with a small grid of services away from the preference.
pub fn standard_sweep_configs() -> Result<Vec<SweepConfig>> {
    let phi = vec![1.0, -0.5];
    let thetas: Vec<Vec<f64>> = [[0.0, 0.0], [2.0, 1.0], [-1.0, 0.5], [1.0, 2.5], [3.0, -3.0]]
        .iter()
        .map(|t| t.to_vec())
        .collect();
    let id = SpdMatrix::identity(2);
    let aniso = SpdMatrix::from_diagonal(&[1.0, 4.0])?;
    let corr = SpdMatrix::from_rows(&[vec![2.0, 0.8], vec![0.8, 1.0]])?;
    let cfg = |cov: &SpdMatrix, dist| SweepConfig {
        cov: cov.clone(),
        phi: phi.clone(),
        dist,
        thetas: thetas.clone(),
    };
    Ok(vec![
        cfg(&id, FeatureDist::Gaussian),
        cfg(&aniso, FeatureDist::Gaussian),
        cfg(&corr, FeatureDist::Rademacher),
        cfg(&id, FeatureDist::SparseRademacher { density: 0.25 }),
        cfg(&id, FeatureDist::SparseRademacher { density: 0.1 }),
    ])
}
