use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::LossModel;
use crate::linalg;
use crate::population::PreferenceVector;

const VIOLATION_TOL: f64 = 1e-9;
const RADII: [f64; 3] = [0.1, 1.0, 10.0];

/// Which approximate triangle inequality was tested, and in which orientation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Inequality {
    /// `c·L_i(θ, φ_i) ≤ L_j(θ, φ_j) + L_j(φ_i, φ_j)`
    Transfer,
    /// `c·L_i(φ_j, φ_i) ≤ L_j(θ, φ_j) + L_i(θ, φ_i)`
    Exchange,
    /// `Transfer` with the roles of `i` and `j` swapped.
    TransferSwapped,
    /// `Exchange` with the roles of `i` and `j` swapped.
    ExchangeSwapped,
}

#[derive(Clone, Debug, Serialize)]
pub struct Violation {
    pub theta: Vec<f64>,
    pub inequality: Inequality,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AssumptionReport {
    pub samples: usize,
    pub violations: Vec<Violation>,
    /// Largest `lhs − rhs` seen over all samples and inequalities.
    pub max_violation: f64,
}

impl AssumptionReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Samples services θ around `φ_i`, `φ_j` and the origin at three radii and
/// records every sample where either triangle inequality fails for constant `c`.
///
/// Both orientations of the pair are checked since `c_ij = c_ji`.
pub fn check_assumptions(
    model_i: &LossModel,
    phi_i: &PreferenceVector,
    model_j: &LossModel,
    phi_j: &PreferenceVector,
    c: f64,
    num_samples: usize,
    rng_seed: u64,
) -> AssumptionReport {
    let (pi, pj) = (phi_i.as_slice(), phi_j.as_slice());
    let d = pi.len();
    let on_sphere = matches!(model_i, LossModel::Cosine) || matches!(model_j, LossModel::Cosine);
    let scale = linalg::norm(&linalg::sub(pi, pj)).max(1e-3);
    let origin = vec![0.0; d];
    let centers: [&[f64]; 3] = [pi, pj, &origin];

    let li = |t: &[f64], p: &[f64]| model_i.eval_unchecked(t, p);
    let lj = |t: &[f64], p: &[f64]| model_j.eval_unchecked(t, p);
    let li_pj = li(pj, pi);
    let lj_pi = lj(pi, pj);

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut violations = Vec::new();
    let mut max_violation = f64::NEG_INFINITY;
    let mut samples = 0;
    while samples < num_samples {
        let center = centers[samples % 3];
        let radius = RADII[(samples / 3) % 3] * scale;
        let mut theta: Vec<f64> = center
            .iter()
            .map(|x| {
                let z: f64 = StandardNormal.sample(&mut rng);
                x + radius * z
            })
            .collect();
        if on_sphere {
            let n = linalg::norm(&theta);
            if n < 1e-12 {
                continue;
            }
            theta.iter_mut().for_each(|x| *x /= n);
        }
        samples += 1;

        let (lti, ltj) = (li(&theta, pi), lj(&theta, pj));
        let checks = [
            (Inequality::Transfer, c * lti, ltj + lj_pi),
            (Inequality::Exchange, c * li_pj, ltj + lti),
            (Inequality::TransferSwapped, c * ltj, lti + li_pj),
            (Inequality::ExchangeSwapped, c * lj_pi, lti + ltj),
        ];
        for (inequality, lhs, rhs) in checks {
            let excess = lhs - rhs;
            max_violation = max_violation.max(excess);
            if excess > VIOLATION_TOL * rhs.abs().max(1.0) {
                violations.push(Violation {
                    theta: theta.clone(),
                    inequality,
                    lhs,
                    rhs,
                });
            }
        }
    }
    AssumptionReport {
        samples,
        violations,
        max_violation,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> PreferenceVector {
        PreferenceVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn huber_one_third_holds() {
        let h = LossModel::huber(1.0).unwrap();
        let r = check_assumptions(&h, &pv(&[0.0, 0.0]), &h, &pv(&[0.8, 0.3]), 1.0 / 3.0, 10_000, 7);
        assert_eq!(r.samples, 10_000);
        assert!(r.holds(), "{:?}", r.violations.first());
    }

    #[test]
    fn huber_near_one_fails() {
        // Counterexample found by grid search along the φ_i − φ_j axis:
        // θ = 2φ_j − φ_i stays in the quadratic regime, where L_i = 1/2 and the right side is 1/4.
        let h = LossModel::huber(2.0).unwrap();
        let (a, b) = (pv(&[0.0]), pv(&[0.5]));
        let lhs = 0.99 * h.eval(&[1.0], a.as_slice()).unwrap();
        let rhs = h.eval(&[1.0], b.as_slice()).unwrap() + h.eval(a.as_slice(), b.as_slice()).unwrap();
        assert!(lhs > rhs);
        let r = check_assumptions(&h, &a, &h, &b, 0.99, 10_000, 11);
        assert!(!r.holds());
    }

    #[test]
    fn tiny_constant_never_fails() {
        let h = LossModel::huber(0.5).unwrap();
        let r = check_assumptions(&h, &pv(&[1.0, -2.0]), &h, &pv(&[0.0, 3.0]), 1e-9, 3_000, 3);
        assert!(r.holds());
    }

    #[test]
    fn cosine_samples_stay_on_sphere() {
        let s = 1.0 / 2f64.sqrt();
        let r = check_assumptions(
            &LossModel::Cosine,
            &pv(&[1.0, 0.0]),
            &LossModel::Cosine,
            &pv(&[s, s]),
            0.5,
            5_000,
            5,
        );
        assert!(r.holds());
        for v in &r.violations {
            assert!((linalg::norm(&v.theta) - 1.0).abs() < 1e-12);
        }
    }
}
