//! Multivariate normal and t probabilities by Genz's separation-of-variables
//! transform over randomized lattice points.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Gamma};

use super::linalg::SpdMatrix;
use super::qmc::{self, QmcEstimate, QmcSpec};
use super::special::{inv_mills, norm_cdf, norm_quantile, t_cdf};
use super::{validate_dof, Dof};
use crate::error::{Error, Result};
use crate::exec::Execution;

pub const MAX_DIM: usize = 20;

/// Covariance factor with variables reordered so that the most constrained
/// ones are integrated first.
#[derive(Debug, Clone)]
pub struct SovFactor {
    /// `perm[i]` is the original index of the i-th integration variable.
    pub perm: Vec<usize>,
    pub chol: DMatrix<f64>,
    pub upper: Vec<f64>,
}

impl SovFactor {
    /// Prioritized Cholesky of `cov` for the region `X ≤ upper`.
    pub fn new(upper: &[f64], cov: &DMatrix<f64>) -> Result<Self> {
        let n = upper.len();
        let mut s = cov.clone();
        let mut l = DMatrix::<f64>::zeros(n, n);
        let mut b = upper.to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut best = i;
            let mut best_p = f64::INFINITY;
            for j in i..n {
                let mut shift = 0.0;
                let mut var = s[(j, j)];
                for k in 0..i {
                    shift += l[(j, k)] * y[k];
                    var -= l[(j, k)] * l[(j, k)];
                }
                let p = norm_cdf((b[j] - shift) / var.max(1e-300).sqrt());
                if p < best_p {
                    best_p = p;
                    best = j;
                }
            }
            if best != i {
                s.swap_rows(i, best);
                s.swap_columns(i, best);
                l.swap_rows(i, best);
                b.swap(i, best);
                perm.swap(i, best);
            }
            let mut d = s[(i, i)];
            for k in 0..i {
                d -= l[(i, k)] * l[(i, k)];
            }
            if !(d > 0.0) {
                return Err(Error::NotPositiveDefinite);
            }
            let d = d.sqrt();
            l[(i, i)] = d;
            for r in (i + 1)..n {
                let mut v = s[(r, i)];
                for k in 0..i {
                    v -= l[(r, k)] * l[(i, k)];
                }
                l[(r, i)] = v / d;
            }
            let mut shift = 0.0;
            for k in 0..i {
                shift += l[(i, k)] * y[k];
            }
            let bt = (b[i] - shift) / d;
            y[i] = if bt.is_finite() { -inv_mills(bt) } else { 0.0 };
        }
        Ok(Self {
            perm,
            chol: l,
            upper: b,
        })
    }

    pub fn dim(&self) -> usize {
        self.upper.len()
    }

    /// Maps uniforms `u` to a draw `z` from `N(0, cov)` restricted to
    /// `z ≤ scale · upper` (in integration order) and returns the
    /// probability weight. Only the first `u.len()` variables are sampled;
    /// the weight always covers all of them.
    pub fn sample(&self, u: &[f64], scale: f64, z: &mut [f64]) -> f64 {
        let n = self.dim();
        let mut weight = 1.0;
        let mut std = [0.0f64; MAX_DIM];
        for i in 0..n {
            let mut shift = 0.0;
            for k in 0..i {
                shift += self.chol[(i, k)] * std[k];
            }
            let lim = (scale * self.upper[i] - shift) / self.chol[(i, i)];
            let e = norm_cdf(lim);
            weight *= e;
            if weight == 0.0 {
                return 0.0;
            }
            if i < u.len() {
                std[i] = norm_quantile((u[i] * e).max(1e-300));
            }
        }
        for i in 0..u.len().min(n) {
            let mut v = 0.0;
            for k in 0..=i {
                v += self.chol[(i, k)] * std[k];
            }
            z[i] = v;
        }
        weight
    }
}

fn check_dims(upper: &DVector<f64>, mean: &DVector<f64>, sigma: &SpdMatrix) -> Result<()> {
    let n = sigma.dim();
    for v in [upper.len(), mean.len()] {
        if v != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: v,
            });
        }
    }
    if n > MAX_DIM {
        return Err(Error::InvalidArgument(format!(
            "dimension {n} exceeds {MAX_DIM}"
        )));
    }
    if mean.iter().any(|v| !v.is_finite()) || upper.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite);
    }
    Ok(())
}

/// `P(X ≤ upper)` for `X ~ N(mean, sigma)`.
pub fn mvn_cdf(
    upper: &DVector<f64>,
    mean: &DVector<f64>,
    sigma: &SpdMatrix,
    qmc: &QmcSpec,
) -> Result<QmcEstimate> {
    mvt_cdf(upper, mean, sigma, f64::INFINITY, qmc)
}

/// `P(X ≤ upper)` for `X ~ t(mean, sigma, nu)`; `nu = ∞` is the normal case.
pub fn mvt_cdf(
    upper: &DVector<f64>,
    mean: &DVector<f64>,
    sigma: &SpdMatrix,
    nu: Dof,
    qmc: &QmcSpec,
) -> Result<QmcEstimate> {
    check_dims(upper, mean, sigma)?;
    validate_dof(nu)?;
    qmc.validate()?;
    let b: Vec<f64> = upper.iter().zip(mean.iter()).map(|(u, m)| u - m).collect();
    let n = b.len();
    if n == 1 {
        let s = sigma.matrix()[(0, 0)].sqrt();
        return Ok(QmcEstimate {
            value: t_cdf(b[0] / s, nu),
            err_est: 0.0,
        });
    }
    let factor = SovFactor::new(&b, sigma.matrix())?;
    let mixing = if nu.is_infinite() {
        None
    } else {
        Some(Gamma::new(0.5 * nu, 0.5 * nu).map_err(|_| Error::InvalidDof(nu))?)
    };
    let extra = usize::from(mixing.is_some());
    let dim = n - 1 + extra;
    let means = qmc::randomized_means(qmc, dim, 1, Execution::Parallel, |u, acc| {
        let mut z = [0.0; MAX_DIM];
        let scale = match &mixing {
            Some(g) => g.inverse_cdf(u[n - 1]).sqrt(),
            None => 1.0,
        };
        acc[0] += factor.sample(&u[..n - 1], scale, &mut z);
    });
    let vals: Vec<f64> = means.iter().map(|m| m[0]).collect();
    let mut est = qmc::summarize(&vals);
    est.value = est.value.clamp(0.0, 1.0);
    Ok(est)
}
