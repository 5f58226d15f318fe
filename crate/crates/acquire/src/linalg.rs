//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-10;

/// A validated symmetric positive-definite matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SpdMatrix {
    mat: DMatrix<f64>,
}

impl SpdMatrix {
    pub fn new(mat: DMatrix<f64>) -> Result<Self> {
        if mat.nrows() != mat.ncols() {
            return Err(Error::NotPositiveDefinite(format!(
                "matrix is {}x{}, expected square",
                mat.nrows(),
                mat.ncols()
            )));
        }
        if mat.nrows() == 0 {
            return Err(Error::NotPositiveDefinite("empty matrix".into()));
        }
        if mat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotPositiveDefinite("non-finite entry".into()));
        }
        let scale = mat.amax().max(1.0);
        let asym = (&mat - mat.transpose()).amax();
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::NotPositiveDefinite(format!(
                "not symmetric (max asymmetry {asym:e})"
            )));
        }
        let sym = (&mat + mat.transpose()) * 0.5;
        if Cholesky::new(sym.clone()).is_none() {
            return Err(Error::NotPositiveDefinite("Cholesky factorization failed".into()));
        }
        let min_eig = SymmetricEigen::new(sym.clone())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if min_eig <= 0.0 {
            return Err(Error::NotPositiveDefinite(format!(
                "smallest eigenvalue {min_eig:e} is not positive"
            )));
        }
        Ok(Self { mat: sym })
    }

    pub fn identity(d: usize) -> Self {
        Self {
            mat: DMatrix::identity(d, d),
        }
    }

    pub fn scaled_identity(d: usize, scale: f64) -> Result<Self> {
        Self::new(DMatrix::identity(d, d) * scale)
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::NotPositiveDefinite("ragged or non-square rows".into()));
        }
        Self::new(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim())
            .map(|i| self.mat.row(i).iter().copied().collect())
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    /// `vᵀ M v`.
    pub fn quad_form(&self, v: &[f64]) -> f64 {
        let d = self.dim();
        let mut acc = 0.0;
        for i in 0..d {
            let mut row = 0.0;
            for j in 0..d {
                row += self.mat[(i, j)] * v[j];
            }
            acc += v[i] * row;
        }
        acc
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut eig: Vec<f64> = SymmetricEigen::new(self.mat.clone())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        eig.sort_by(f64::total_cmp);
        eig
    }

    pub fn is_identity(&self) -> bool {
        self.mat == DMatrix::identity(self.dim(), self.dim())
    }
}

impl Serialize for SpdMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SpdMatrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(deserializer)?;
        SpdMatrix::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// All λ solving `A v = λ B v`, ascending.
///
/// Uses the symmetric reduction `B = L Lᵀ`, `C = L⁻¹ A L⁻ᵀ`.
pub fn generalized_eigenvalues(a: &SpdMatrix, b: &SpdMatrix) -> Result<Vec<f64>> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let chol: Cholesky<f64, Dyn> = Cholesky::new(b.mat.clone())
        .ok_or_else(|| Error::NotPositiveDefinite("Cholesky factorization failed".into()))?;
    let l = chol.l();
    let x = l
        .solve_lower_triangular(&a.mat)
        .ok_or_else(|| Error::NotPositiveDefinite("singular Cholesky factor".into()))?;
    let c = l
        .solve_lower_triangular(&x.transpose())
        .ok_or_else(|| Error::NotPositiveDefinite("singular Cholesky factor".into()))?;
    let c = (&c + c.transpose()) * 0.5;
    let mut eig: Vec<f64> = SymmetricEigen::new(c).eigenvalues.iter().copied().collect();
    eig.sort_by(f64::total_cmp);
    Ok(eig)
}

pub fn min_generalized_eigenvalue(a: &SpdMatrix, b: &SpdMatrix) -> Result<f64> {
    Ok(generalized_eigenvalues(a, b)?[0])
}

pub fn max_generalized_eigenvalue(a: &SpdMatrix, b: &SpdMatrix) -> Result<f64> {
    Ok(*generalized_eigenvalues(a, b)?.last().expect("nonempty spectrum"))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}
