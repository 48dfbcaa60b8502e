use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{check_data, estep, initialize, mstep, Data, EStepMoments, FitConfig, MixtureModel};
use crate::distributions::param_count;
use crate::error::{Error, Result};
use crate::exec::derive_seed;
use crate::numerics::linalg::{matrix_from_rows, matrix_rows};
use crate::numerics::truncated::OrthantEngine;

/// Outcome of the best start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: MixtureModel,
    pub loglik: f64,
    pub loglik_trace: Vec<f64>,
    /// Completed EM cycles.
    pub iterations: usize,
    pub converged: bool,
    pub bic: f64,
    /// `n × g` responsibilities under `model`.
    #[serde(serialize_with = "ser_rows", deserialize_with = "de_rows")]
    pub posterior: DMatrix<f64>,
    /// Index of the winning start.
    pub start: usize,
    /// Starts abandoned after numerical failure.
    pub failed_starts: usize,
    pub config: FitConfig,
}

fn ser_rows<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    matrix_rows(m).serialize(s)
}

fn de_rows<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<DMatrix<f64>, D::Error> {
    let rows = Vec::<Vec<f64>>::deserialize(d)?;
    matrix_from_rows(&rows, None).map_err(serde::de::Error::custom)
}

impl FitResult {
    /// Hard cluster assignment per observation.
    pub fn labels(&self) -> Vec<usize> {
        self.posterior
            .row_iter()
            .map(|r| {
                let mut best = 0;
                for (j, v) in r.iter().enumerate() {
                    if *v > r[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }
}

/// `−2 loglik + K ln n` with `K = (g − 1) + g · param_count`.
pub fn bic(loglik: f64, model: &MixtureModel, n: usize) -> f64 {
    let g = model.g();
    let k = (g - 1) + g * param_count(model.kind, model.p(), model.q());
    -2.0 * loglik + k as f64 * (n as f64).ln()
}

fn engine(config: &FitConfig) -> OrthantEngine {
    OrthantEngine {
        qmc: config.qmc,
        exact_max_dim: config.exact_max_dim,
        exec: config.exec,
    }
}

/// EM from a given starting model.
pub fn fit_from(data: &Data, start: MixtureModel, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    check_data(data)?;
    let engine = engine(config);
    let mut model = start;
    if let Some(nu) = config.nu_fixed {
        for c in &mut model.components {
            c.nu = nu;
        }
    }
    let mut est: EStepMoments = estep(&model, data, &engine, config.exec)?;
    let mut trace = vec![est.loglik];
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=config.max_iter {
        let next = mstep(&est, data, &model, config.nu_fixed)?;
        let next_est = estep(&next, data, &engine, config.exec)?;
        let gain = next_est.loglik - est.loglik;
        if gain < 0.0 {
            // Numerical noise at the optimum; keep the better model.
            converged = gain > -config.tol;
            break;
        }
        model = next;
        est = next_est;
        trace.push(est.loglik);
        iterations = it;
        if gain < config.tol {
            converged = true;
            break;
        }
    }
    let order = model.canonical_order();
    let model = model.permuted(&order);
    let posterior = DMatrix::from_fn(data.nrows(), order.len(), |i, j| est.resp[(i, order[j])]);
    Ok(FitResult {
        bic: bic(est.loglik, &model, data.nrows()),
        model,
        loglik: est.loglik,
        loglik_trace: trace,
        iterations,
        converged,
        posterior,
        start: 0,
        failed_starts: 0,
        config: config.clone(),
    })
}

/// Best of `config.n_starts` runs from seeded k-means starts. Ties on the
/// log-likelihood go to fewer iterations, then the lower start index.
pub fn fit(
    data: &Data,
    g: usize,
    kind: crate::distributions::ModelKind,
    config: &FitConfig,
) -> Result<FitResult> {
    config.validate()?;
    check_data(data)?;
    let mut best: Option<FitResult> = None;
    let mut failed = 0;
    for s in 0..config.n_starts {
        let seed = derive_seed(config.seed, "start", s as u64);
        let run = initialize(data, g, kind, seed).and_then(|init| fit_from(data, init, config));
        let mut run = match run {
            Ok(r) => r,
            Err(e) if e.is_numerical() => {
                failed += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        run.start = s;
        let better = match &best {
            None => true,
            Some(b) => {
                run.loglik > b.loglik || (run.loglik == b.loglik && run.iterations < b.iterations)
            }
        };
        if better {
            best = Some(run);
        }
    }
    let mut best = best.ok_or(Error::AllStartsFailed(config.n_starts))?;
    best.failed_starts = failed;
    Ok(best)
}
