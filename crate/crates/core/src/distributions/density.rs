use nalgebra::{DMatrix, DVector};

use super::CfustParams;
use crate::error::{Error, Result};
use crate::numerics::special::{digamma, ln_gamma, LN_SQRT_2PI};
use crate::numerics::truncated::{orthant_moments, OrthantEngine, Precision};
use crate::numerics::{QmcSpec, SpdMatrix};

/// Floor applied to orthant probabilities that underflow.
const LOG_TINY: f64 = -708.0;

/// Per-observation output of [`DensityKernel::posterior`]: the log density
/// and conditional expectations of the latent `(w, u)` given `y`, where
/// `u = |U₀|` and `w` is the precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub logpdf: f64,
    pub e_w: f64,
    pub e_logw: f64,
    /// `E[w u | y]`.
    pub e_wu: DVector<f64>,
    /// `E[w u uᵀ | y]`.
    pub e_wuu: DMatrix<f64>,
    /// 3-sigma relative error of the orthant factor (0 for closed forms).
    pub rel_err: f64,
    /// True when the orthant factor underflowed and was floored.
    pub floored: bool,
}

/// Quantities shared by every evaluation for one parameter set.
#[derive(Debug, Clone)]
pub struct DensityKernel {
    mu: DVector<f64>,
    omega: SpdMatrix,
    lambda: SpdMatrix,
    /// `ΔᵀΩ⁻¹ = ΛΔᵀΣ⁻¹`, `q × p`.
    to_latent: DMatrix<f64>,
    nu: f64,
    log_norm: f64,
    skewless: bool,
}

impl DensityKernel {
    pub fn new(params: &CfustParams) -> Result<Self> {
        let p = params.p();
        let q = params.q();
        let delta = &params.delta;
        let omega = SpdMatrix::new(params.sigma.matrix() + delta * delta.transpose())?;
        let sinv_delta = params.sigma.solve(delta)?;
        let m = DMatrix::identity(q, q) + delta.transpose() * &sinv_delta;
        let m = SpdMatrix::new(m)?;
        let lambda = SpdMatrix::new(m.inverse())?;
        let to_latent = lambda.matrix() * sinv_delta.transpose();
        let nu = params.nu;
        let pf = p as f64;
        let mut log_norm = q as f64 * std::f64::consts::LN_2 - 0.5 * omega.log_det();
        if nu.is_infinite() {
            log_norm -= pf * LN_SQRT_2PI;
        } else {
            log_norm += ln_gamma(0.5 * (nu + pf))
                - ln_gamma(0.5 * nu)
                - 0.5 * pf * (nu * std::f64::consts::PI).ln();
        }
        Ok(Self {
            mu: params.mu.clone(),
            omega,
            lambda,
            to_latent,
            nu,
            log_norm,
            skewless: delta.iter().all(|&v| v == 0.0),
        })
    }

    pub fn p(&self) -> usize {
        self.mu.len()
    }

    pub fn q(&self) -> usize {
        self.lambda.dim()
    }

    /// Scale of the latent conditional, `I − ΔᵀΩ⁻¹Δ`.
    pub fn lambda(&self) -> &SpdMatrix {
        &self.lambda
    }

    fn check(&self, y: &[f64]) -> Result<DVector<f64>> {
        if y.len() != self.p() {
            return Err(Error::DimensionMismatch {
                expected: self.p(),
                got: y.len(),
            });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(DVector::from_column_slice(y) - &self.mu)
    }

    /// Symmetric part of the log density and the precision law given `y`.
    fn symmetric_part(&self, r: &DVector<f64>) -> (f64, f64, Precision) {
        let d = self.omega.mahalanobis(r);
        let pf = self.p() as f64;
        if self.nu.is_infinite() {
            (self.log_norm - 0.5 * d, d, Precision::Unit)
        } else {
            let nu = self.nu;
            let lp = self.log_norm - 0.5 * (nu + pf) * (d / nu).ln_1p();
            (
                lp,
                d,
                Precision::Gamma {
                    shape: 0.5 * (nu + pf),
                    rate: 0.5 * (nu + d),
                },
            )
        }
    }

    pub fn logpdf(&self, y: &[f64], engine: &OrthantEngine) -> Result<f64> {
        Ok(self.posterior(y, engine)?.logpdf)
    }

    /// Log density and latent conditional moments at `y`.
    pub fn posterior(&self, y: &[f64], engine: &OrthantEngine) -> Result<Posterior> {
        let r = self.check(y)?;
        let (log_sym, _, precision) = self.symmetric_part(&r);
        let q = self.q();
        let (shape, rate) = match precision {
            Precision::Unit => (f64::INFINITY, f64::INFINITY),
            Precision::Gamma { shape, rate } => (shape, rate),
        };
        let prior_w = |floored: bool, log_z: f64| -> Posterior {
            let (e_w, e_logw, e_sqrt_w) = if shape.is_infinite() {
                (1.0, 0.0, 1.0)
            } else {
                (
                    shape / rate,
                    digamma(shape) - rate.ln(),
                    (ln_gamma(shape + 0.5) - ln_gamma(shape)).exp() / rate.sqrt(),
                )
            };
            let h = (2.0 / std::f64::consts::PI).sqrt();
            let (e_wu, e_wuu) = if floored {
                (DVector::zeros(q), DMatrix::zeros(q, q))
            } else {
                let mut m = DMatrix::from_element(q, q, h * h);
                m.fill_diagonal(1.0);
                (DVector::from_element(q, h * e_sqrt_w), m)
            };
            Posterior {
                logpdf: log_sym + log_z,
                e_w,
                e_logw,
                e_wu,
                e_wuu,
                rel_err: 0.0,
                floored,
            }
        };
        if self.skewless {
            // Every orthant has mass 2^-q and U is half-normal given w.
            return Ok(prior_w(false, -(q as f64) * std::f64::consts::LN_2));
        }
        let c = &self.to_latent * &r;
        match orthant_moments(c.as_slice(), &self.lambda, precision, engine) {
            Ok(m) => Ok(Posterior {
                logpdf: log_sym + m.log_z.max(LOG_TINY),
                e_w: m.e_w,
                e_logw: m.e_logw,
                e_wu: m.e_wu,
                e_wuu: m.e_wuu,
                rel_err: m.rel_err,
                floored: false,
            }),
            Err(Error::DegenerateOrthant(_)) => Ok(prior_w(true, LOG_TINY)),
            Err(e) => Err(e),
        }
    }
}

/// Density at `y`.
pub fn pdf(params: &CfustParams, y: &[f64], qmc: &QmcSpec) -> Result<f64> {
    Ok(logpdf(params, y, qmc)?.exp())
}

/// Log density at `y`, evaluated in log space throughout.
pub fn logpdf(params: &CfustParams, y: &[f64], qmc: &QmcSpec) -> Result<f64> {
    qmc.validate()?;
    DensityKernel::new(params)?.logpdf(y, &OrthantEngine::new(*qmc))
}
