//! Per-user loss families, alignment constants and center refitting.
//!
//! Every family is nonnegative and vanishes exactly at the user's preference,
//! so a service placed on a preference costs that user nothing.

mod alignment;
mod check;
mod refit;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub use alignment::{alignment_constant, min_generalized_eigenvalue, AlignmentMatrix};
pub use check::{check_assumptions, AssumptionReport, Inequality, Violation};
pub use refit::{refit_center, RefitOptions};
pub(crate) use refit::refit_with;

use crate::error::{Error, Result};
use crate::linalg::{self, SpdMatrix};
use crate::population::PreferenceVector;

/// Tolerance on `‖v‖₂ - 1` for cosine inputs.
pub const UNIT_NORM_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossFamily {
    SqMahalanobis,
    Mahalanobis,
    Huber,
    Cosine,
    MetricL2,
    LipschitzSc,
}

impl LossFamily {
    pub fn name(self) -> &'static str {
        match self {
            LossFamily::SqMahalanobis => "sq_mahalanobis",
            LossFamily::Mahalanobis => "mahalanobis",
            LossFamily::Huber => "huber",
            LossFamily::Cosine => "cosine",
            LossFamily::MetricL2 => "metric_l2",
            LossFamily::LipschitzSc => "lipschitz_sc",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "sq_mahalanobis" => LossFamily::SqMahalanobis,
            "mahalanobis" => LossFamily::Mahalanobis,
            "huber" => LossFamily::Huber,
            "cosine" => LossFamily::Cosine,
            "metric_l2" => LossFamily::MetricL2,
            "lipschitz_sc" => LossFamily::LipschitzSc,
            other => return Err(Error::InvalidLoss(format!("unknown loss family {other:?}"))),
        })
    }
}

/// Lipschitz loss with linear growth: `‖θ − φ‖_A` where the anchor form `A`
/// has spectrum inside `[μ², L²]`, so `μ‖r‖ ≤ loss ≤ L‖r‖`.
#[derive(Clone, Debug, PartialEq)]
pub struct LipschitzSc {
    lipschitz: f64,
    mu: f64,
    anchor: SpdMatrix,
}

impl LipschitzSc {
    pub fn new(lipschitz: f64, mu: f64, anchor: SpdMatrix) -> Result<Self> {
        if !(mu > 0.0 && mu <= lipschitz && lipschitz.is_finite()) {
            return Err(Error::InvalidLoss(format!(
                "lipschitz_sc requires 0 < mu <= L (got mu={mu}, L={lipschitz})"
            )));
        }
        let eig = anchor.eigenvalues();
        let (lo, hi) = (eig[0], eig[eig.len() - 1]);
        let slack = 1e-12 * lipschitz * lipschitz;
        if lo < mu * mu - slack || hi > lipschitz * lipschitz + slack {
            return Err(Error::InvalidLoss(format!(
                "anchor spectrum [{lo}, {hi}] outside [mu^2, L^2] = [{}, {}]",
                mu * mu,
                lipschitz * lipschitz
            )));
        }
        Ok(Self {
            lipschitz,
            mu,
            anchor,
        })
    }

    /// Default anchor `μL·I`.
    pub fn isotropic(d: usize, lipschitz: f64, mu: f64) -> Result<Self> {
        if !(mu > 0.0 && mu <= lipschitz) {
            return Err(Error::InvalidLoss(format!(
                "lipschitz_sc requires 0 < mu <= L (got mu={mu}, L={lipschitz})"
            )));
        }
        Self::new(lipschitz, mu, SpdMatrix::scaled_identity(d, mu * lipschitz)?)
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn anchor(&self) -> &SpdMatrix {
        &self.anchor
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LossModel {
    /// `(θ−φ)ᵀ Σ (θ−φ)`; `Σ = I` is the squared Euclidean loss.
    SqMahalanobis(SpdMatrix),
    /// `sqrt((θ−φ)ᵀ Σ (θ−φ))`.
    Mahalanobis(SpdMatrix),
    /// Huber on the Euclidean prediction error with width `delta`.
    Huber { delta: f64 },
    /// `1 − θᵀφ` on the unit sphere.
    Cosine,
    MetricL2,
    LipschitzSc(LipschitzSc),
}

impl LossModel {
    pub fn sq_euclidean(d: usize) -> Self {
        LossModel::SqMahalanobis(SpdMatrix::identity(d))
    }

    pub fn huber(delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidLoss(format!("huber width must be positive, got {delta}")));
        }
        Ok(LossModel::Huber { delta })
    }

    pub fn family(&self) -> LossFamily {
        match self {
            LossModel::SqMahalanobis(_) => LossFamily::SqMahalanobis,
            LossModel::Mahalanobis(_) => LossFamily::Mahalanobis,
            LossModel::Huber { .. } => LossFamily::Huber,
            LossModel::Cosine => LossFamily::Cosine,
            LossModel::MetricL2 => LossFamily::MetricL2,
            LossModel::LipschitzSc(_) => LossFamily::LipschitzSc,
        }
    }

    /// Dimension this model is tied to, if any.
    pub fn dim(&self) -> Option<usize> {
        match self {
            LossModel::SqMahalanobis(m) | LossModel::Mahalanobis(m) => Some(m.dim()),
            LossModel::LipschitzSc(p) => Some(p.anchor.dim()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LossModel::Huber { delta } if !(*delta > 0.0 && delta.is_finite()) => Err(
                Error::InvalidLoss(format!("huber width must be positive, got {delta}")),
            ),
            _ => Ok(()),
        }
    }

    /// Loss of a service at `theta` for a user whose preference is `phi`.
    pub fn eval(&self, theta: &[f64], phi: &[f64]) -> Result<f64> {
        if theta.len() != phi.len() {
            return Err(Error::DimensionMismatch {
                expected: phi.len(),
                got: theta.len(),
            });
        }
        if let Some(d) = self.dim() {
            if d != phi.len() {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: phi.len(),
                });
            }
        }
        self.validate()?;
        if matches!(self, LossModel::Cosine) {
            for v in [theta, phi] {
                let n = linalg::norm(v);
                if (n - 1.0).abs() > UNIT_NORM_TOL {
                    return Err(Error::NonUnitNorm { norm: n });
                }
            }
        }
        Ok(self.eval_unchecked(theta, phi))
    }

    pub(crate) fn eval_unchecked(&self, theta: &[f64], phi: &[f64]) -> f64 {
        let r = linalg::sub(theta, phi);
        match self {
            LossModel::SqMahalanobis(cov) => cov.quad_form(&r).max(0.0),
            LossModel::Mahalanobis(cov) => cov.quad_form(&r).max(0.0).sqrt(),
            LossModel::Huber { delta } => huber(linalg::norm(&r), *delta),
            // Equal to 1 − θᵀφ on the sphere, and exactly zero at θ = φ.
            LossModel::Cosine => 0.5 * linalg::dot(&r, &r),
            LossModel::MetricL2 => linalg::norm(&r),
            LossModel::LipschitzSc(p) => p.anchor.quad_form(&r).max(0.0).sqrt(),
        }
    }

    pub fn from_spec(spec: &LossSpec, d: usize) -> Result<Self> {
        let family = LossFamily::parse(&spec.family)?;
        let p = &spec.params;
        let model = match family {
            LossFamily::SqMahalanobis => LossModel::SqMahalanobis(matrix_param(p, "cov", d)?),
            LossFamily::Mahalanobis => LossModel::Mahalanobis(matrix_param(p, "cov", d)?),
            LossFamily::Huber => LossModel::huber(number_param(p, "delta")?)?,
            LossFamily::Cosine => LossModel::Cosine,
            LossFamily::MetricL2 => LossModel::MetricL2,
            LossFamily::LipschitzSc => {
                let lipschitz = number_param(p, "lipschitz")?;
                let mu = number_param(p, "mu")?;
                let params = match p.get("anchor") {
                    Some(_) => LipschitzSc::new(lipschitz, mu, matrix_param(p, "anchor", d)?)?,
                    None => LipschitzSc::isotropic(d, lipschitz, mu)?,
                };
                LossModel::LipschitzSc(params)
            }
        };
        if let Some(md) = model.dim() {
            if md != d {
                return Err(Error::DimensionMismatch { expected: d, got: md });
            }
        }
        Ok(model)
    }

    pub fn to_spec(&self) -> LossSpec {
        let mut params = Map::new();
        match self {
            LossModel::SqMahalanobis(m) | LossModel::Mahalanobis(m) => {
                if !m.is_identity() {
                    params.insert("cov".into(), serde_json::to_value(m).expect("matrix json"));
                }
            }
            LossModel::Huber { delta } => {
                params.insert("delta".into(), Value::from(*delta));
            }
            LossModel::Cosine | LossModel::MetricL2 => {}
            LossModel::LipschitzSc(p) => {
                params.insert("lipschitz".into(), Value::from(p.lipschitz));
                params.insert("mu".into(), Value::from(p.mu));
                params.insert(
                    "anchor".into(),
                    serde_json::to_value(&p.anchor).expect("matrix json"),
                );
            }
        }
        LossSpec {
            family: self.family().name().to_string(),
            params,
        }
    }
}

/// Wire form of a loss model: `{"family": ..., "params": {...}}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub family: String,
    #[serde(default)]
    pub params: Map<String, Value>,
}

fn number_param(params: &Map<String, Value>, key: &str) -> Result<f64> {
    params
        .get(key)
        .and_then(Value::as_f64)
        .ok_or_else(|| Error::InvalidLoss(format!("missing numeric parameter {key:?}")))
}

/// Matrix parameter; absent means identity.
fn matrix_param(params: &Map<String, Value>, key: &str, d: usize) -> Result<SpdMatrix> {
    match params.get(key) {
        None => Ok(SpdMatrix::identity(d)),
        Some(v) => {
            let rows: Vec<Vec<f64>> = serde_json::from_value(v.clone())
                .map_err(|e| Error::InvalidLoss(format!("parameter {key:?}: {e}")))?;
            SpdMatrix::from_rows(&rows)
        }
    }
}

pub(crate) fn huber(r: f64, delta: f64) -> f64 {
    if r <= delta {
        0.5 * r * r
    } else {
        delta * (r - 0.5 * delta)
    }
}

/// Loss of service `theta` for a user with `model` and preference `phi`.
pub fn eval_loss(model: &LossModel, theta: &PreferenceVector, phi: &PreferenceVector) -> Result<f64> {
    model.eval(theta.as_slice(), phi.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> PreferenceVector {
        PreferenceVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn huber_linear_regime() {
        let m = LossModel::huber(1.0).unwrap();
        let l = eval_loss(&m, &pv(&[2.0, 0.0]), &pv(&[0.0, 0.0])).unwrap();
        assert!((l - 1.5).abs() < 1e-15);
        let q = eval_loss(&m, &pv(&[0.5, 0.0]), &pv(&[0.0, 0.0])).unwrap();
        assert!((q - 0.125).abs() < 1e-15);
    }

    #[test]
    fn cosine_symmetry_points() {
        let phi = pv(&[0.6, 0.8]);
        assert_eq!(eval_loss(&LossModel::Cosine, &phi, &phi).unwrap(), 0.0);
        let l = eval_loss(&LossModel::Cosine, &pv(&[-0.6, -0.8]), &phi).unwrap();
        assert!((l - 2.0).abs() < 1e-12);
        assert!(matches!(
            eval_loss(&LossModel::Cosine, &pv(&[1.0, 1.0]), &phi),
            Err(Error::NonUnitNorm { .. })
        ));
    }

    #[test]
    fn sq_mahalanobis_scaled_identity() {
        let m = LossModel::SqMahalanobis(SpdMatrix::scaled_identity(2, 2.0).unwrap());
        let l = eval_loss(&m, &pv(&[1.0, 0.0]), &pv(&[0.0, 0.0])).unwrap();
        assert!((l - 2.0).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let m = LossModel::MetricL2;
        assert!(matches!(
            eval_loss(&m, &pv(&[1.0]), &pv(&[0.0, 0.0])),
            Err(Error::DimensionMismatch { .. })
        ));
        let m = LossModel::sq_euclidean(3);
        assert!(eval_loss(&m, &pv(&[1.0, 0.0]), &pv(&[0.0, 0.0])).is_err());
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(LossModel::huber(0.0).is_err());
        assert!(LipschitzSc::isotropic(2, 1.0, 2.0).is_err());
        let anchor = SpdMatrix::from_diagonal(&[1.0, 16.0]).unwrap();
        assert!(LipschitzSc::new(2.0, 1.0, anchor).is_err());
        let spec = LossSpec {
            family: "sq_mahalanobis".into(),
            params: serde_json::from_str(r#"{"cov": [[1.0, 2.0], [2.0, 1.0]]}"#).unwrap(),
        };
        assert!(matches!(
            LossModel::from_spec(&spec, 2),
            Err(Error::NotPositiveDefinite(_))
        ));
        let spec = LossSpec {
            family: "pinball".into(),
            params: Map::new(),
        };
        assert!(LossModel::from_spec(&spec, 2).is_err());
    }

    #[test]
    fn spec_round_trip() {
        let models = [
            LossModel::SqMahalanobis(SpdMatrix::from_diagonal(&[1.0, 3.0]).unwrap()),
            LossModel::sq_euclidean(2),
            LossModel::Mahalanobis(SpdMatrix::identity(2)),
            LossModel::huber(0.7).unwrap(),
            LossModel::Cosine,
            LossModel::MetricL2,
            LossModel::LipschitzSc(LipschitzSc::isotropic(2, 2.0, 0.5).unwrap()),
        ];
        for m in models {
            assert_eq!(LossModel::from_spec(&m.to_spec(), 2).unwrap(), m);
        }
    }

    fn arb_model(d: usize) -> impl Strategy<Value = LossModel> {
        prop_oneof![
            prop::collection::vec(0.1f64..5.0, d)
                .prop_map(|diag| LossModel::SqMahalanobis(SpdMatrix::from_diagonal(&diag).unwrap())),
            prop::collection::vec(0.1f64..5.0, d)
                .prop_map(|diag| LossModel::Mahalanobis(SpdMatrix::from_diagonal(&diag).unwrap())),
            (0.05f64..5.0).prop_map(|delta| LossModel::huber(delta).unwrap()),
            Just(LossModel::MetricL2),
            (0.1f64..1.0, 1.0f64..4.0).prop_map(move |(mu, l)| LossModel::LipschitzSc(
                LipschitzSc::isotropic(d, l, mu).unwrap()
            )),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn nonnegative_with_unique_zero(
            model in arb_model(3),
            theta in prop::collection::vec(-10.0f64..10.0, 3),
            phi in prop::collection::vec(-10.0f64..10.0, 3),
        ) {
            let l = model.eval(&theta, &phi).unwrap();
            prop_assert!(l >= 0.0);
            prop_assert_eq!(model.eval(&phi, &phi).unwrap(), 0.0);
            if theta != phi {
                prop_assert!(l > 0.0);
            }
        }

        #[test]
        fn cosine_nonnegative_on_sphere(
            a in prop::collection::vec(-1.0f64..1.0, 3),
            b in prop::collection::vec(-1.0f64..1.0, 3),
        ) {
            let (na, nb) = (linalg::norm(&a), linalg::norm(&b));
            prop_assume!(na > 1e-3 && nb > 1e-3);
            let a: Vec<f64> = a.iter().map(|x| x / na).collect();
            let b: Vec<f64> = b.iter().map(|x| x / nb).collect();
            let l = LossModel::Cosine.eval(&a, &b).unwrap();
            prop_assert!(l >= 0.0);
            prop_assert!((l - (1.0 - linalg::dot(&a, &b))).abs() < 1e-12);
        }
    }
}
