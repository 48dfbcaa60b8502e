//! Numerical foundations: SPD linear algebra, special functions, normal and
//! t probabilities, and moments of orthant-truncated distributions.

pub mod bvn;
pub mod linalg;
pub mod mixing;
pub mod mvcdf;
pub mod qmc;
pub mod quad;
pub mod special;
pub mod truncated;

pub use mvcdf::{mvn_cdf, mvt_cdf};
pub use qmc::{QmcEstimate, QmcSpec};
pub use truncated::{half_normal_moments, trunc_moments, TruncatedMoments};

pub use linalg::{chol_solve, SpdMatrix};

/// Degrees of freedom, with `f64::INFINITY` meaning the normal kernel.
pub type Dof = f64;

pub fn validate_dof(nu: Dof) -> crate::Result<()> {
    if nu > 0.0 && !nu.is_nan() {
        Ok(())
    } else {
        Err(crate::Error::InvalidDof(nu))
    }
}
