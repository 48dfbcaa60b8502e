//! The CFUST family `Y = μ + Δ|U₀| + U₁` with `U₀ ~ N_q(0, I/w)`,
//! `U₁ ~ N_p(0, Σ/w)` and `w ~ Gamma(ν/2, ν/2)` (`w ≡ 1` when `ν = ∞`).

mod density;
mod sample;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::numerics::linalg::{matrix_from_rows, matrix_rows};
use crate::numerics::{validate_dof, Dof, SpdMatrix};

pub use density::{logpdf, pdf, DensityKernel, Posterior};
pub use sample::{sample, skew_direction_rank, skew_term_sample, SkewTermSample};

/// Location, scale, skewness and degrees of freedom of a CFUST law.
#[derive(Debug, Clone, PartialEq)]
pub struct CfustParams {
    pub mu: DVector<f64>,
    pub sigma: SpdMatrix,
    /// `p × q` skewness matrix.
    pub delta: DMatrix<f64>,
    pub nu: Dof,
}

impl CfustParams {
    pub fn new(mu: DVector<f64>, sigma: SpdMatrix, delta: DMatrix<f64>, nu: Dof) -> Result<Self> {
        let p = mu.len();
        if p == 0 {
            return Err(Error::ShapeMismatch("empty location vector".into()));
        }
        if sigma.dim() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: sigma.dim(),
            });
        }
        if delta.nrows() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: delta.nrows(),
            });
        }
        if delta.ncols() == 0 {
            return Err(Error::ShapeMismatch(
                "skewness matrix needs at least one column".into(),
            ));
        }
        if mu.iter().chain(delta.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        validate_dof(nu)?;
        Ok(Self {
            mu,
            sigma,
            delta,
            nu,
        })
    }

    pub fn p(&self) -> usize {
        self.mu.len()
    }

    pub fn q(&self) -> usize {
        self.delta.ncols()
    }

    pub fn is_normal(&self) -> bool {
        self.nu.is_infinite()
    }
}

/// Structural sub-family of a parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    /// `Δ = 0`, stored as one zero column.
    SymmetricT,
    /// `q = 1`.
    Restricted,
    /// `q = p` with diagonal `Δ`.
    Unrestricted,
    GeneralCfust(usize),
}

impl ModelKind {
    /// Columns of `Δ` for data of dimension `p`.
    pub fn q(self, p: usize) -> usize {
        match self {
            ModelKind::SymmetricT | ModelKind::Restricted => 1,
            ModelKind::Unrestricted => p,
            ModelKind::GeneralCfust(q) => q,
        }
    }

    /// Checks shape and zero pattern of `params` against the tag.
    pub fn check(self, params: &CfustParams) -> Result<()> {
        let (p, q) = (params.p(), params.q());
        let d = &params.delta;
        let bad = |msg: &str| Err(Error::ShapeMismatch(format!("{self}: {msg}")));
        match self {
            ModelKind::SymmetricT if q != 1 || d.iter().any(|&v| v != 0.0) => {
                bad("skewness must be zero")
            }
            ModelKind::Restricted if q != 1 => bad("skewness must be a single column"),
            ModelKind::Unrestricted if q != p => bad("skewness must be square"),
            ModelKind::Unrestricted
                if (0..p).any(|i| (0..p).any(|j| i != j && d[(i, j)] != 0.0)) =>
            {
                bad("skewness must be diagonal")
            }
            ModelKind::GeneralCfust(k) if k != q || k == 0 => bad("column count differs from tag"),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKind::SymmetricT => f.write_str("symmetric_t"),
            ModelKind::Restricted => f.write_str("restricted"),
            ModelKind::Unrestricted => f.write_str("unrestricted"),
            ModelKind::GeneralCfust(q) => write!(f, "cfust{q}"),
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "symmetric_t" | "symmetric" | "t" => Ok(ModelKind::SymmetricT),
            "restricted" | "rmst" => Ok(ModelKind::Restricted),
            "unrestricted" | "umst" => Ok(ModelKind::Unrestricted),
            other => other
                .strip_prefix("cfust")
                .and_then(|q| q.trim_start_matches(':').parse::<usize>().ok())
                .filter(|&q| q > 0)
                .map(ModelKind::GeneralCfust)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown model kind `{s}`"))),
        }
    }
}

impl Serialize for ModelKind {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ModelKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

/// Parameters together with their sub-family tag.
#[derive(Debug, Clone, PartialEq)]
pub struct Cfust {
    pub params: CfustParams,
    pub kind: ModelKind,
}

impl Cfust {
    pub fn new(params: CfustParams, kind: ModelKind) -> Result<Self> {
        kind.check(&params)?;
        Ok(Self { params, kind })
    }
}

pub fn make_restricted(
    mu: DVector<f64>,
    sigma: SpdMatrix,
    delta_vec: DVector<f64>,
    nu: Dof,
) -> Result<Cfust> {
    let delta = DMatrix::from_column_slice(delta_vec.len(), 1, delta_vec.as_slice());
    Cfust::new(
        CfustParams::new(mu, sigma, delta, nu)?,
        ModelKind::Restricted,
    )
}

pub fn make_unrestricted(
    mu: DVector<f64>,
    sigma: SpdMatrix,
    delta_diag: DVector<f64>,
    nu: Dof,
) -> Result<Cfust> {
    let delta = DMatrix::from_diagonal(&delta_diag);
    Cfust::new(
        CfustParams::new(mu, sigma, delta, nu)?,
        ModelKind::Unrestricted,
    )
}

/// Any `p × q` skewness matrix; `q > p` is allowed here.
pub fn make_general(
    mu: DVector<f64>,
    sigma: SpdMatrix,
    delta: DMatrix<f64>,
    nu: Dof,
) -> Result<Cfust> {
    let q = delta.ncols();
    Cfust::new(
        CfustParams::new(mu, sigma, delta, nu)?,
        ModelKind::GeneralCfust(q),
    )
}

pub fn make_symmetric(mu: DVector<f64>, sigma: SpdMatrix, nu: Dof) -> Result<Cfust> {
    let p = mu.len();
    Cfust::new(
        CfustParams::new(mu, sigma, DMatrix::zeros(p, 1), nu)?,
        ModelKind::SymmetricT,
    )
}

/// Free parameters: location, scale, skewness and `ν`.
pub fn param_count(kind: ModelKind, p: usize, q: usize) -> usize {
    let skew = match kind {
        ModelKind::SymmetricT => 0,
        ModelKind::Restricted | ModelKind::Unrestricted => p,
        ModelKind::GeneralCfust(_) => p * q,
    };
    p + p * (p + 1) / 2 + skew + 1
}

/// `ν` on disk: a number, or the string `"inf"`.
pub mod dof_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(nu: &f64, s: S) -> Result<S::Ok, S::Error> {
        if nu.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*nu)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if matches!(t.as_str(), "inf" | "Inf" | "infinity" | "+inf") => {
                Ok(f64::INFINITY)
            }
            Repr::Text(t) => Err(serde::de::Error::custom(format!(
                "invalid degrees of freedom `{t}`"
            ))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CfustRepr {
    mu: Vec<f64>,
    sigma: Vec<Vec<f64>>,
    delta: Vec<Vec<f64>>,
    #[serde(with = "dof_serde")]
    nu: f64,
    kind: ModelKind,
}

impl Serialize for Cfust {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        CfustRepr {
            mu: self.params.mu.iter().copied().collect(),
            sigma: matrix_rows(self.params.sigma.matrix()),
            delta: matrix_rows(&self.params.delta),
            nu: self.params.nu,
            kind: self.kind,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Cfust {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = CfustRepr::deserialize(d)?;
        let build = || -> Result<Cfust> {
            let sigma = SpdMatrix::from_rows(&r.sigma)?;
            let delta = matrix_from_rows(&r.delta, None)?;
            Cfust::new(
                CfustParams::new(DVector::from_vec(r.mu.clone()), sigma, delta, r.nu)?,
                r.kind,
            )
        };
        build().map_err(serde::de::Error::custom)
    }
}
