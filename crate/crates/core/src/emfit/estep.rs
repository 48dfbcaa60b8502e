use nalgebra::{DMatrix, DVector};

use super::{check_data, Data, MixtureModel};
use crate::distributions::{DensityKernel, Posterior};
use crate::error::{Error, Result};
use crate::exec::{pairwise_sum, Execution};
use crate::numerics::truncated::OrthantEngine;

/// Conditional expectations for every observation and component.
#[derive(Debug, Clone)]
pub struct EStepMoments {
    /// `n × g` responsibilities.
    pub resp: DMatrix<f64>,
    /// `n × g` values of `E[w | y]`.
    pub e_w: DMatrix<f64>,
    /// `n × g` values of `E[log w | y]`.
    pub e_logw: DMatrix<f64>,
    /// Indexed `[component][observation]`.
    pub e_wu: Vec<Vec<DVector<f64>>>,
    pub e_wuu: Vec<Vec<DMatrix<f64>>>,
    /// Observed-data log-likelihood of the model the moments came from.
    pub loglik: f64,
    /// Observation-component pairs whose orthant factor underflowed.
    pub floored: usize,
}

/// Responsibilities and latent moments under `model`.
pub fn estep(
    model: &MixtureModel,
    data: &Data,
    engine: &OrthantEngine,
    exec: Execution,
) -> Result<EStepMoments> {
    check_data(data)?;
    if data.ncols() != model.p() {
        return Err(Error::DimensionMismatch {
            expected: model.p(),
            got: data.ncols(),
        });
    }
    let (n, g) = (data.nrows(), model.g());
    let kernels = model
        .components
        .iter()
        .map(DensityKernel::new)
        .collect::<Result<Vec<_>>>()?;
    let log_weights: Vec<f64> = model.weights.iter().map(|w| w.ln()).collect();
    let inner = OrthantEngine {
        exec: Execution::Sequential,
        ..*engine
    };
    let rows: Vec<Result<Vec<Posterior>>> = exec.map_range(n, |i| {
        let y: Vec<f64> = data.row(i).iter().copied().collect();
        kernels.iter().map(|k| k.posterior(&y, &inner)).collect()
    });
    let mut resp = DMatrix::zeros(n, g);
    let mut e_w = DMatrix::zeros(n, g);
    let mut e_logw = DMatrix::zeros(n, g);
    let mut e_wu = vec![Vec::with_capacity(n); g];
    let mut e_wuu = vec![Vec::with_capacity(n); g];
    let mut per_obs = Vec::with_capacity(n);
    let mut floored = 0;
    for (i, row) in rows.into_iter().enumerate() {
        let row = row?;
        let logs: Vec<f64> = row
            .iter()
            .zip(&log_weights)
            .map(|(p, lw)| p.logpdf + lw)
            .collect();
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !top.is_finite() {
            return Err(Error::NonFinite);
        }
        let total: f64 = logs.iter().map(|l| (l - top).exp()).sum();
        per_obs.push(top + total.ln());
        for (h, post) in row.into_iter().enumerate() {
            resp[(i, h)] = if g == 1 {
                1.0
            } else {
                (logs[h] - top).exp() / total
            };
            e_w[(i, h)] = post.e_w;
            e_logw[(i, h)] = post.e_logw;
            floored += usize::from(post.floored);
            e_wu[h].push(post.e_wu);
            e_wuu[h].push(post.e_wuu);
        }
    }
    Ok(EStepMoments {
        resp,
        e_w,
        e_logw,
        e_wu,
        e_wuu,
        loglik: pairwise_sum(&per_obs),
        floored,
    })
}
