use nalgebra::DMatrix;
use serde::Serialize;

use super::LossModel;
use crate::error::{Error, Result};
use crate::linalg::{self, SpdMatrix};
use crate::population::Population;

/// Smallest λ with `A v = λ B v`. Both inputs must be symmetric positive-definite.
pub fn min_generalized_eigenvalue(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    let a = SpdMatrix::new(a.clone())?;
    let b = SpdMatrix::new(b.clone())?;
    linalg::min_generalized_eigenvalue(&a, &b)
}

fn symmetric_pencil_min(a: &SpdMatrix, b: &SpdMatrix) -> Result<f64> {
    let ab = linalg::min_generalized_eigenvalue(a, b)?;
    let ba = linalg::min_generalized_eigenvalue(b, a)?;
    Ok(ab.min(ba))
}

/// Approximate-triangle constant `c_ij` for two distinct users.
///
/// Defined only within a family. Huber users with different widths get the
/// same-width constant scaled by `min(δ)/max(δ)`.
pub fn alignment_constant(model_i: &LossModel, model_j: &LossModel) -> Result<f64> {
    model_i.validate()?;
    model_j.validate()?;
    let c = match (model_i, model_j) {
        (LossModel::Huber { delta: a }, LossModel::Huber { delta: b }) => {
            (1.0 / 3.0) * a.min(*b) / a.max(*b)
        }
        (LossModel::Cosine, LossModel::Cosine) => 0.5,
        (LossModel::MetricL2, LossModel::MetricL2) => 1.0,
        (LossModel::SqMahalanobis(a), LossModel::SqMahalanobis(b)) => {
            0.5 * symmetric_pencil_min(a, b)?
        }
        (LossModel::Mahalanobis(a), LossModel::Mahalanobis(b)) => symmetric_pencil_min(a, b)?,
        (LossModel::LipschitzSc(a), LossModel::LipschitzSc(b)) => {
            a.mu().min(b.mu()) / a.lipschitz().max(b.lipschitz())
        }
        _ => {
            return Err(Error::CrossFamily {
                left: model_i.family().name(),
                right: model_j.family().name(),
            })
        }
    };
    Ok(c)
}

/// Symmetric matrix of pairwise constants with unit diagonal.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlignmentMatrix {
    n: usize,
    c: Vec<f64>,
}

impl AlignmentMatrix {
    pub fn from_models(models: &[&LossModel]) -> Result<Self> {
        let n = models.len();
        let mut c = vec![1.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let v = alignment_constant(models[i], models[j])?;
                c[i * n + j] = v;
                c[j * n + i] = v;
            }
        }
        Ok(Self { n, c })
    }

    pub fn from_population(pop: &Population) -> Result<Self> {
        let models: Vec<&LossModel> = pop.users().iter().map(|u| &u.loss).collect();
        Self::from_models(&models)
    }

    /// Every off-diagonal entry equal to `c`.
    pub fn uniform(n: usize, c: f64) -> Result<Self> {
        Self::from_fn(n, |_, _| c)
    }

    /// Builds from an arbitrary pair function (only `i < j` is queried).
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut c = vec![1.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let v = f(i, j);
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::Validation(format!(
                        "alignment constant c[{i}][{j}] = {v} must be positive"
                    )));
                }
                c[i * n + j] = v;
                c[j * n + i] = v;
            }
        }
        Ok(Self { n, c })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.c[i * self.n + j]
    }
}
