use nalgebra::{DMatrix, DVector};

use super::{Data, EStepMoments, MixtureModel, NU_BRACKET};
use crate::distributions::{CfustParams, ModelKind};
use crate::error::{Error, Result};
use crate::numerics::linalg::{lu_solve, symmetrize};
use crate::numerics::special::digamma;
use crate::numerics::SpdMatrix;

/// Weighted sufficient statistics of one component.
struct Stats {
    n: f64,
    s_w: f64,
    s_wu: DVector<f64>,
    s_wuu: DMatrix<f64>,
    s_wy: DVector<f64>,
    /// `Σ τ E[w u] yᵀ`, `q × p`.
    s_wuy: DMatrix<f64>,
    s_wyy: DMatrix<f64>,
    /// `Σ τ (E[log w] − E[w])`.
    s_logw: f64,
}

fn stats(m: &EStepMoments, data: &Data, h: usize, q: usize) -> Stats {
    let p = data.ncols();
    let mut s = Stats {
        n: 0.0,
        s_w: 0.0,
        s_wu: DVector::zeros(q),
        s_wuu: DMatrix::zeros(q, q),
        s_wy: DVector::zeros(p),
        s_wuy: DMatrix::zeros(q, p),
        s_wyy: DMatrix::zeros(p, p),
        s_logw: 0.0,
    };
    for i in 0..data.nrows() {
        let t = m.resp[(i, h)];
        if t == 0.0 {
            continue;
        }
        let y = data.row(i).transpose();
        let tw = t * m.e_w[(i, h)];
        let twu = &m.e_wu[h][i] * t;
        s.n += t;
        s.s_w += tw;
        s.s_wu += &twu;
        s.s_wuu += &m.e_wuu[h][i] * t;
        s.s_wy += &y * tw;
        s.s_wuy += &twu * y.transpose();
        s.s_wyy += &y * y.transpose() * tw;
        s.s_logw += t * (m.e_logw[(i, h)] - m.e_w[(i, h)]);
    }
    s
}

/// `G = E[w x xᵀ]` and `H = E[w x] yᵀ` summed, for `x = (1, u)`.
fn design(s: &Stats, q: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let p = s.s_wy.len();
    let mut g = DMatrix::zeros(q + 1, q + 1);
    g[(0, 0)] = s.s_w;
    for j in 0..q {
        g[(0, j + 1)] = s.s_wu[j];
        g[(j + 1, 0)] = s.s_wu[j];
        for k in 0..q {
            g[(j + 1, k + 1)] = s.s_wuu[(j, k)];
        }
    }
    let mut h = DMatrix::zeros(q + 1, p);
    h.row_mut(0).copy_from(&s.s_wy.transpose());
    for j in 0..q {
        h.row_mut(j + 1).copy_from(&s.s_wuy.row(j));
    }
    (g, h)
}

/// Residual scatter `Σ τ E[w (y − Bx)(y − Bx)ᵀ]` for `B = [μ Δ]`.
fn scatter(s: &Stats, b: &DMatrix<f64>, g: &DMatrix<f64>, h: &DMatrix<f64>) -> DMatrix<f64> {
    let bh = b * h;
    let mut m = &s.s_wyy - &bh - bh.transpose() + b * g * b.transpose();
    symmetrize(&mut m);
    m
}

/// SPD scale from a scatter matrix, with one ridge retry.
fn scale_from(mut m: DMatrix<f64>, n: f64) -> Result<SpdMatrix> {
    m /= n;
    match SpdMatrix::new(m.clone()) {
        Ok(s) => Ok(s),
        Err(Error::NotPositiveDefinite) => {
            let p = m.nrows();
            let ridge = 1e-8 * m.trace().abs().max(f64::MIN_POSITIVE) / p as f64;
            for i in 0..p {
                m[(i, i)] += ridge;
            }
            SpdMatrix::new(m)
                .map_err(|_| Error::SingularSystem("scale matrix is not positive definite".into()))
        }
        Err(e) => Err(e),
    }
}

/// Location and skewness for diagonal `Δ`, given the current scale inverse.
fn diagonal_update(
    g: &DMatrix<f64>,
    h: &DMatrix<f64>,
    prec: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let p = prec.nrows();
    // Unknowns (μ₁..μ_p, δ₁..δ_p); B[i,0] = μ_i and B[i,1+i] = δ_i.
    let mut a = DMatrix::zeros(2 * p, 2 * p);
    let mut rhs = DMatrix::zeros(2 * p, 1);
    for i in 0..p {
        a[(i, i)] = g[(0, 0)];
        a[(i, p + i)] = g[(i + 1, 0)];
        rhs[(i, 0)] = h[(0, i)];
        let r = p + i;
        for k in 0..p {
            a[(r, k)] = prec[(i, k)] * g[(0, i + 1)];
            a[(r, p + k)] = prec[(i, k)] * g[(k + 1, i + 1)];
            rhs[(r, 0)] += prec[(i, k)] * h[(i + 1, k)];
        }
    }
    let x = lu_solve(&a, &rhs)?;
    let mut b = DMatrix::zeros(p, p + 1);
    for i in 0..p {
        b[(i, 0)] = x[(i, 0)];
        b[(i, i + 1)] = x[(p + i, 0)];
    }
    Ok(b)
}

/// Maximizes the expected complete-data log-likelihood in `ν`, where
/// `c` is the weighted mean of `E[log w] − E[w]`.
pub(crate) fn update_nu(c: f64) -> f64 {
    let f = |nu: f64| (0.5 * nu).ln() + 1.0 - digamma(0.5 * nu) + c;
    let (mut lo, mut hi) = (NU_BRACKET.0.ln(), NU_BRACKET.1.ln());
    if f(NU_BRACKET.0) <= 0.0 {
        return NU_BRACKET.0;
    }
    if f(NU_BRACKET.1) >= 0.0 {
        return NU_BRACKET.1;
    }
    while hi - lo > 1e-6 {
        let mid = 0.5 * (lo + hi);
        if f(mid.exp()) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi)).exp()
}

/// One conditional-maximization cycle: weights, then location and skewness,
/// then scale, then degrees of freedom. `prev` supplies the scale used by
/// the diagonal-skewness update.
pub fn mstep(
    m: &EStepMoments,
    data: &Data,
    prev: &MixtureModel,
    nu_fixed: Option<f64>,
) -> Result<MixtureModel> {
    let kind = prev.kind;
    let (p, q) = (prev.p(), prev.q());
    let g = prev.g();
    let mut comps = Vec::with_capacity(g);
    let mut sizes = Vec::with_capacity(g);
    for h in 0..g {
        let s = stats(m, data, h, q);
        if !(s.n > p as f64 * 1e-8) || !(s.s_w > 0.0) {
            return Err(Error::SingularSystem(format!("component {h} is empty")));
        }
        let (gm, hm) = design(&s, q);
        let b = match kind {
            ModelKind::SymmetricT => {
                let mut b = DMatrix::zeros(p, q + 1);
                b.set_column(0, &(&s.s_wy / s.s_w));
                b
            }
            ModelKind::Restricted | ModelKind::GeneralCfust(_) => lu_solve(&gm, &hm)?.transpose(),
            ModelKind::Unrestricted => {
                diagonal_update(&gm, &hm, &prev.components[h].sigma.inverse())?
            }
        };
        let sigma = scale_from(scatter(&s, &b, &gm, &hm), s.n)?;
        let nu = match nu_fixed {
            Some(v) => v,
            None => update_nu(s.s_logw / s.n),
        };
        let mu = b.column(0).into_owned();
        let delta = b.columns(1, q).into_owned();
        comps.push(CfustParams::new(mu, sigma, delta, nu)?);
        sizes.push(s.n);
    }
    let total: f64 = sizes.iter().sum();
    MixtureModel::new(sizes.iter().map(|s| s / total).collect(), comps, kind)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nu_update_solves_score_equation() {
        for nu in [1.0, 4.0, 25.0, 300.0] {
            // c chosen so that nu is the exact root.
            let c = -((0.5f64 * nu).ln() + 1.0 - digamma(0.5 * nu));
            let got = update_nu(c);
            assert!((got / nu - 1.0).abs() < 2e-6, "{got} vs {nu}");
        }
        assert_eq!(update_nu(-1.0), NU_BRACKET.1);
        assert_eq!(update_nu(-50.0), NU_BRACKET.0);
    }
}
