//! Symmetric positive-definite matrices and the dense helpers built on them.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// A symmetric positive-definite matrix together with its lower Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    matrix: DMatrix<f64>,
    chol: DMatrix<f64>,
}

impl SpdMatrix {
    /// Validates symmetry (1e-12 relative) and factorizes. The stored matrix is
    /// exactly symmetrized from its lower triangle.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let n = matrix.nrows();
        if n == 0 || matrix.ncols() != n {
            return Err(Error::ShapeMismatch(format!(
                "expected a nonempty square matrix, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let scale = matrix.amax().max(f64::MIN_POSITIVE);
        for i in 0..n {
            for j in 0..i {
                if (matrix[(i, j)] - matrix[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::ShapeMismatch(format!(
                        "matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let mut sym = matrix;
        for i in 0..n {
            for j in 0..i {
                sym[(j, i)] = sym[(i, j)];
            }
        }
        let chol = cholesky_lower(&sym).ok_or(Error::NotPositiveDefinite)?;
        Ok(Self { matrix: sym, chol })
    }

    pub fn identity(n: usize) -> Self {
        Self::new(DMatrix::identity(n, n)).expect("identity is SPD")
    }

    pub fn from_diagonal(d: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::ShapeMismatch("ragged matrix rows".into()));
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Lower-triangular `L` with `L Lᵀ = A`.
    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// Solves `A x = b` for a matrix right-hand side.
    pub fn solve(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if b.nrows() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: b.nrows(),
            });
        }
        let mut x = b.clone();
        for mut col in x.column_iter_mut() {
            forward_substitute(&self.chol, col.as_mut_slice());
            backward_substitute_transposed(&self.chol, col.as_mut_slice());
        }
        Ok(x)
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        if b.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: b.len(),
            });
        }
        let mut x = b.clone();
        forward_substitute(&self.chol, x.as_mut_slice());
        backward_substitute_transposed(&self.chol, x.as_mut_slice());
        Ok(x)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut inv = self
            .solve(&DMatrix::identity(n, n))
            .expect("square identity has matching rows");
        symmetrize(&mut inv);
        inv
    }

    /// `xᵀ A⁻¹ x`.
    pub fn mahalanobis(&self, x: &DVector<f64>) -> f64 {
        let mut z = x.clone();
        forward_substitute(&self.chol, z.as_mut_slice());
        z.norm_squared()
    }
}

impl Serialize for SpdMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        matrix_rows(&self.matrix).serialize(s)
    }
}

impl<'de> Deserialize<'de> for SpdMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        SpdMatrix::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// Row-major nested vectors, the on-disk layout for every matrix.
pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Inverse of [`matrix_rows`]; `ncols` disambiguates zero-row input.
pub fn matrix_from_rows(rows: &[Vec<f64>], ncols: Option<usize>) -> Result<DMatrix<f64>> {
    let c = rows.first().map(|r| r.len()).or(ncols).unwrap_or(0);
    if rows.iter().any(|r| r.len() != c) {
        return Err(Error::ShapeMismatch("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), c, |i, j| rows[i][j]))
}

/// Plain Cholesky; `None` when a pivot is not strictly positive.
pub fn cholesky_lower(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Some(l)
}

/// Solves `L z = b` in place.
pub fn forward_substitute(l: &DMatrix<f64>, b: &mut [f64]) {
    let n = b.len();
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * b[k];
        }
        b[i] = s / l[(i, i)];
    }
}

/// Solves `Lᵀ x = z` in place.
pub fn backward_substitute_transposed(l: &DMatrix<f64>, b: &mut [f64]) {
    let n = b.len();
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * b[k];
        }
        b[i] = s / l[(i, i)];
    }
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Solves `a x = b` for symmetric positive-definite `a`.
pub fn chol_solve(a: &SpdMatrix, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    a.solve(b)
}

/// Solves a general square system by partial-pivot LU; `SingularSystem` when
/// the pivot ratio drops below `1e-13`.
pub fn lu_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: b.nrows(),
        });
    }
    let scale = a.amax();
    let lu = a.clone().lu();
    let u = lu.u();
    let min_pivot = u
        .diagonal()
        .iter()
        .fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if !(scale > 0.0) || !(min_pivot > 1e-13 * scale) {
        return Err(Error::SingularSystem(format!(
            "pivot ratio {:e}",
            min_pivot / scale.max(f64::MIN_POSITIVE)
        )));
    }
    lu.solve(b)
        .ok_or_else(|| Error::SingularSystem("LU solve failed".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, seed: u64) -> SpdMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        SpdMatrix::new(a.transpose() * &a + DMatrix::identity(n, n)).unwrap()
    }

    #[test]
    fn identity_solve_returns_rhs() {
        let a = SpdMatrix::identity(3);
        let b = DMatrix::from_column_slice(3, 1, &[1.5, -2.0, 7.0]);
        assert_eq!(chol_solve(&a, &b).unwrap(), b);
    }

    #[test]
    fn scalar_solve_divides() {
        let a = SpdMatrix::from_diagonal(&[4.0]).unwrap();
        let x = chol_solve(&a, &DMatrix::from_element(1, 1, 2.0)).unwrap();
        assert_eq!(x[(0, 0)], 0.5);
    }

    #[test]
    fn random_spd_residual_is_small() {
        for seed in 0..10 {
            let a = random_spd(5, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let b = DMatrix::from_fn(5, 2, |_, _| rng.random::<f64>());
            let x = chol_solve(&a, &b).unwrap();
            let resid = (a.matrix() * &x - &b).norm() / b.norm();
            assert!(resid <= 1e-10, "residual {resid}");
        }
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(SpdMatrix::new(m), Err(Error::NotPositiveDefinite)));
    }

    #[test]
    fn asymmetric_matrix_is_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.4, 2.0]);
        assert!(matches!(SpdMatrix::new(m), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn log_det_and_mahalanobis_agree_with_dense_routes() {
        let a = random_spd(4, 7);
        let det = a.matrix().determinant();
        assert!((a.log_det() - det.ln()).abs() < 1e-10);
        let x = DVector::from_column_slice(&[0.3, -1.0, 2.0, 0.1]);
        let direct = (x.transpose() * a.inverse() * &x)[(0, 0)];
        assert!((a.mahalanobis(&x) - direct).abs() < 1e-10);
    }

    #[test]
    fn singular_lu_is_reported() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let b = DMatrix::from_element(2, 1, 1.0);
        assert!(matches!(lu_solve(&a, &b), Err(Error::SingularSystem(_))));
    }
}
