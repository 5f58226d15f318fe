use nalgebra::{Cholesky, DMatrix, DVector};

use super::LossModel;
use crate::error::{Error, Result};
use crate::linalg;
use crate::population::PreferenceVector;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const MAX_ITER: usize = 10_000;
const DIST_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug)]
pub struct RefitOptions {
    /// Stop once a step moves the center by less than `tol·(1 + ‖θ‖)`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for RefitOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: MAX_ITER,
        }
    }
}

/// `argmin_θ Σ w_i L_i(θ, φ_i)`.
///
/// Closed form when every active member is squared Mahalanobis, the normalized
/// weighted mean for cosine members, and otherwise a majorize-minimize
/// iteration (iteratively reweighted least squares) that handles Huber and the
/// norm-type families together.
pub fn refit_center(
    members: &[(&LossModel, &PreferenceVector)],
    weights: &[f64],
    tol: f64,
) -> Result<PreferenceVector> {
    refit_with(
        members,
        weights,
        RefitOptions {
            tol,
            ..RefitOptions::default()
        },
    )
}

pub(crate) fn refit_with(
    members: &[(&LossModel, &PreferenceVector)],
    weights: &[f64],
    opts: RefitOptions,
) -> Result<PreferenceVector> {
    if members.is_empty() {
        return Err(Error::EmptyCluster);
    }
    if weights.len() != members.len() {
        return Err(Error::Validation(format!(
            "{} weights for {} members",
            weights.len(),
            members.len()
        )));
    }
    if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
        return Err(Error::Validation("weights must be finite and nonnegative".into()));
    }
    let d = members[0].1.dim();
    let mut active: Vec<(&LossModel, &[f64], f64)> = Vec::with_capacity(members.len());
    for ((model, phi), &w) in members.iter().zip(weights) {
        if phi.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: phi.dim(),
            });
        }
        model.validate()?;
        if w > 0.0 {
            active.push((model, phi.as_slice(), w));
        }
    }
    if active.is_empty() {
        return Err(Error::Validation("all refit weights are zero".into()));
    }
    if active.len() == 1 {
        return PreferenceVector::new(active[0].1.to_vec());
    }

    let cosine = active
        .iter()
        .filter(|(m, _, _)| matches!(m, LossModel::Cosine))
        .count();
    if cosine > 0 {
        if cosine != active.len() {
            return Err(Error::Validation(
                "cosine members cannot share a center with other families".into(),
            ));
        }
        return spherical_mean(&active, d);
    }
    if active
        .iter()
        .all(|(m, _, _)| matches!(m, LossModel::SqMahalanobis(_)))
    {
        return quadratic_center(&active, d);
    }
    majorize_minimize(&active, d, opts)
}

fn spherical_mean(active: &[(&LossModel, &[f64], f64)], d: usize) -> Result<PreferenceVector> {
    let mut m = vec![0.0; d];
    for (_, phi, w) in active {
        for (acc, x) in m.iter_mut().zip(phi.iter()) {
            *acc += w * x;
        }
    }
    let n = linalg::norm(&m);
    if n < 1e-12 {
        return Err(Error::Validation(
            "weighted mean of cosine members vanishes; minimizer is not unique".into(),
        ));
    }
    PreferenceVector::new(m.into_iter().map(|x| x / n).collect())
}

fn quadratic_center(active: &[(&LossModel, &[f64], f64)], d: usize) -> Result<PreferenceVector> {
    // A shared covariance cancels out: the center is the weighted mean.
    if active.windows(2).all(|p| p[0].0 == p[1].0) {
        let total: f64 = active.iter().map(|(_, _, w)| w).sum();
        let mean = (0..d)
            .map(|c| active.iter().map(|(_, phi, w)| w * phi[c]).sum::<f64>() / total)
            .collect();
        return PreferenceVector::new(mean);
    }
    let mut h = DMatrix::<f64>::zeros(d, d);
    let mut b = DVector::<f64>::zeros(d);
    for (model, phi, w) in active {
        let LossModel::SqMahalanobis(cov) = model else {
            unreachable!("quadratic_center called with non-quadratic member")
        };
        let s = cov.as_matrix();
        h += s * *w;
        b += (s * DVector::from_column_slice(phi)) * *w;
    }
    solve_spd(h, b)
}

fn solve_spd(h: DMatrix<f64>, b: DVector<f64>) -> Result<PreferenceVector> {
    let chol = Cholesky::new(h).ok_or(Error::SingularCovariance)?;
    let x = chol.solve(&b);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularCovariance);
    }
    PreferenceVector::new(x.iter().copied().collect())
}

fn objective(active: &[(&LossModel, &[f64], f64)], theta: &[f64]) -> f64 {
    active
        .iter()
        .map(|(m, phi, w)| w * m.eval_unchecked(theta, phi))
        .sum()
}

/// Adds `w · M` and `w · M φ` for the quadratic majorizer `½ rᵀ M r` of one member at `theta`.
fn add_majorizer(
    model: &LossModel,
    phi: &[f64],
    w: f64,
    theta: &[f64],
    h: &mut DMatrix<f64>,
    b: &mut DVector<f64>,
) {
    let d = phi.len();
    let r = linalg::sub(theta, phi);
    let mut add_scaled = |mat: Option<&DMatrix<f64>>, s: f64| {
        for i in 0..d {
            let mut row = 0.0;
            for j in 0..d {
                let mij = match mat {
                    Some(m) => m[(i, j)],
                    None => f64::from(u8::from(i == j)),
                };
                h[(i, j)] += w * s * mij;
                row += mij * phi[j];
            }
            b[i] += w * s * row;
        }
    };
    match model {
        LossModel::SqMahalanobis(cov) => add_scaled(Some(cov.as_matrix()), 2.0),
        LossModel::Huber { delta } => {
            let dist = linalg::norm(&r);
            let s = if dist <= *delta { 1.0 } else { delta / dist };
            add_scaled(None, s);
        }
        LossModel::MetricL2 => add_scaled(None, 1.0 / linalg::norm(&r).max(DIST_FLOOR)),
        LossModel::Mahalanobis(cov) => {
            let dist = cov.quad_form(&r).max(0.0).sqrt();
            add_scaled(Some(cov.as_matrix()), 1.0 / dist.max(DIST_FLOOR));
        }
        LossModel::LipschitzSc(p) => {
            let dist = p.anchor().quad_form(&r).max(0.0).sqrt();
            add_scaled(Some(p.anchor().as_matrix()), 1.0 / dist.max(DIST_FLOOR));
        }
        LossModel::Cosine => unreachable!("cosine members use the spherical mean"),
    }
}

fn majorize_minimize(
    active: &[(&LossModel, &[f64], f64)],
    d: usize,
    opts: RefitOptions,
) -> Result<PreferenceVector> {
    let total_w: f64 = active.iter().map(|(_, _, w)| w).sum();
    let mut theta = vec![0.0; d];
    for (_, phi, w) in active {
        for (t, x) in theta.iter_mut().zip(phi.iter()) {
            *t += w * x / total_w;
        }
    }

    let mut converged = false;
    for _ in 0..opts.max_iter {
        let mut h = DMatrix::<f64>::zeros(d, d);
        let mut b = DVector::<f64>::zeros(d);
        for (model, phi, w) in active {
            add_majorizer(model, phi, *w, &theta, &mut h, &mut b);
        }
        let next = solve_spd(h, b)?.into_inner();
        let step = linalg::norm(&linalg::sub(&next, &theta));
        let scale = 1.0 + linalg::norm(&theta);
        theta = next;
        if step <= opts.tol * scale {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            iterations: opts.max_iter,
        });
    }

    // Non-smooth members can pin the minimizer to a preference exactly.
    let mut best = objective(active, &theta);
    for (model, phi, _) in active {
        if matches!(model, LossModel::SqMahalanobis(_) | LossModel::Huber { .. }) {
            continue;
        }
        let f = objective(active, phi);
        if f < best {
            best = f;
            theta = phi.to_vec();
        }
    }
    PreferenceVector::new(theta)
}
