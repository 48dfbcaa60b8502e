//! EM fitting of finite mixtures of CFUST distributions.

mod estep;
mod fit;
mod init;
mod mstep;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::distributions::{dof_serde, CfustParams, ModelKind};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::numerics::linalg::{matrix_from_rows, matrix_rows};
use crate::numerics::{QmcSpec, SpdMatrix};

pub use estep::{estep, EStepMoments};
pub use fit::{bic, fit, fit_from, FitResult};
pub use init::{initialize, kmeans, project_skewness};
pub use mstep::mstep;

/// Above this, a fitted `ν` is effectively normal.
pub const NU_EFFECTIVELY_NORMAL: f64 = 1e4;
/// Bracket searched by the `ν` update.
pub const NU_BRACKET: (f64, f64) = (0.5, 1e6);

/// Mixing proportions and components of one sub-family.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureModel {
    pub weights: Vec<f64>,
    pub components: Vec<CfustParams>,
    pub kind: ModelKind,
}

impl MixtureModel {
    pub fn new(weights: Vec<f64>, components: Vec<CfustParams>, kind: ModelKind) -> Result<Self> {
        if weights.is_empty() || weights.len() != components.len() {
            return Err(Error::ShapeMismatch(
                "weights and components differ in length".into(),
            ));
        }
        if weights.iter().any(|&w| !(w > 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12
        {
            return Err(Error::InvalidArgument(
                "mixing proportions must be positive and sum to 1".into(),
            ));
        }
        let p = components[0].p();
        for c in &components {
            if c.p() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    got: c.p(),
                });
            }
            kind.check(c)?;
        }
        Ok(Self {
            weights,
            components,
            kind,
        })
    }

    pub fn g(&self) -> usize {
        self.weights.len()
    }

    pub fn p(&self) -> usize {
        self.components[0].p()
    }

    pub fn q(&self) -> usize {
        self.components[0].q()
    }

    /// Reorders components by the first coordinate of their location.
    pub(crate) fn canonical_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.g()).collect();
        idx.sort_by(|&a, &b| self.components[a].mu[0].total_cmp(&self.components[b].mu[0]));
        idx
    }

    pub(crate) fn permuted(&self, order: &[usize]) -> Self {
        Self {
            weights: order.iter().map(|&i| self.weights[i]).collect(),
            components: order.iter().map(|&i| self.components[i].clone()).collect(),
            kind: self.kind,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ComponentRepr {
    mu: Vec<f64>,
    sigma: Vec<Vec<f64>>,
    delta: Vec<Vec<f64>>,
    #[serde(with = "dof_serde")]
    nu: f64,
}

#[derive(Serialize, Deserialize)]
struct MixtureRepr {
    kind: ModelKind,
    weights: Vec<f64>,
    components: Vec<ComponentRepr>,
}

impl Serialize for MixtureModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MixtureRepr {
            kind: self.kind,
            weights: self.weights.clone(),
            components: self
                .components
                .iter()
                .map(|c| ComponentRepr {
                    mu: c.mu.iter().copied().collect(),
                    sigma: matrix_rows(c.sigma.matrix()),
                    delta: matrix_rows(&c.delta),
                    nu: c.nu,
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for MixtureModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = MixtureRepr::deserialize(d)?;
        let build = || -> Result<MixtureModel> {
            let comps = r
                .components
                .iter()
                .map(|c| {
                    CfustParams::new(
                        DVector::from_vec(c.mu.clone()),
                        SpdMatrix::from_rows(&c.sigma)?,
                        matrix_from_rows(&c.delta, None)?,
                        c.nu,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            MixtureModel::new(r.weights.clone(), comps, r.kind)
        };
        build().map_err(serde::de::Error::custom)
    }
}

/// Controls for [`fit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub max_iter: usize,
    /// Stop once the log-likelihood gain of an iteration falls below this.
    pub tol: f64,
    #[serde(default, with = "opt_dof")]
    pub nu_fixed: Option<f64>,
    pub n_starts: usize,
    pub seed: u64,
    pub qmc: QmcSpec,
    /// Latent dimensions up to this use closed-form orthant moments.
    pub exact_max_dim: usize,
    pub exec: Execution,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iter: 1000,
            tol: 1e-5,
            nu_fixed: None,
            n_starts: 1,
            seed: 1,
            qmc: Self::ESTEP_QMC,
            exact_max_dim: 3,
            exec: Execution::Parallel,
        }
    }
}

impl FitConfig {
    /// Lattice budget per observation for latent dimensions above the
    /// closed-form limit. Smaller than [`QmcSpec::default`] because it is
    /// spent once per observation, component and iteration.
    pub const ESTEP_QMC: QmcSpec = QmcSpec {
        point_count: 256,
        seed: 0x5eed_cf05,
        randomization_count: 4,
    };

    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument("tol must be positive".into()));
        }
        if self.n_starts == 0 {
            return Err(Error::InvalidArgument("n_starts must be at least 1".into()));
        }
        if let Some(nu) = self.nu_fixed {
            crate::numerics::validate_dof(nu)?;
        }
        self.qmc.validate()
    }
}

mod opt_dof {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Wrap(#[serde(with = "crate::distributions::dof_serde")] f64);

    pub fn serialize<S: Serializer>(nu: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        nu.map(Wrap).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
    }
}

/// Observations as rows.
pub type Data = DMatrix<f64>;

pub(crate) fn check_data(data: &Data) -> Result<()> {
    if data.nrows() == 0 {
        return Err(Error::EmptyData);
    }
    if data.ncols() == 0 {
        return Err(Error::ShapeMismatch("data has no columns".into()));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(())
}
