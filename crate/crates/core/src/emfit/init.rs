use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_data, Data, MixtureModel};
use crate::distributions::{CfustParams, ModelKind};
use crate::error::{Error, Result};
use crate::exec::derive_seed;
use crate::numerics::SpdMatrix;

const INIT_NU: f64 = 40.0;
const SHRINK: f64 = 0.9;
const SKEW_SCALE: f64 = 0.1;
const LLOYD_ITERS: usize = 100;
/// Fresh k-means seeds tried when a cluster is too small to give a scale matrix.
const PARTITION_ATTEMPTS: u64 = 20;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Seeded k-means++ followed by Lloyd iterations. Returns a cluster index
/// per row; ties go to the lowest cluster index.
pub fn kmeans(data: &Data, g: usize, seed: u64) -> Vec<usize> {
    let n = data.nrows();
    let rows: Vec<Vec<f64>> = data
        .row_iter()
        .map(|r| r.iter().copied().collect())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = vec![rows[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = rows.iter().map(|r| sq_dist(r, &centers[0])).collect();
    while centers.len() < g {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut t = rng.random::<f64>() * total;
            let mut k = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if t < *d {
                    k = i;
                    break;
                }
                t -= d;
            }
            k
        } else {
            rng.random_range(0..n)
        };
        centers.push(rows[pick].clone());
        for (d, r) in d2.iter_mut().zip(&rows) {
            *d = d.min(sq_dist(r, &centers[centers.len() - 1]));
        }
    }
    let nearest = |r: &[f64], centers: &[Vec<f64>]| {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (k, c) in centers.iter().enumerate() {
            let d = sq_dist(r, c);
            if d < best_d {
                best = k;
                best_d = d;
            }
        }
        best
    };
    let mut labels: Vec<usize> = rows.iter().map(|r| nearest(r, &centers)).collect();
    for _ in 0..LLOYD_ITERS {
        for (k, c) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = rows
                .iter()
                .zip(&labels)
                .filter(|(_, &l)| l == k)
                .map(|(r, _)| r)
                .collect();
            if members.is_empty() {
                continue;
            }
            for (j, cj) in c.iter_mut().enumerate() {
                *cj = members.iter().map(|r| r[j]).sum::<f64>() / members.len() as f64;
            }
        }
        let next: Vec<usize> = rows.iter().map(|r| nearest(r, &centers)).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    labels
}

/// k-means partition whose clusters all hold at least `p + 1` rows, so each
/// has a nonsingular covariance. An isolated outlier can otherwise claim a
/// cluster of its own; the seed is redrawn until that stops happening. The
/// first attempt uses `seed` itself, and the last attempt is kept if none
/// qualifies.
fn partition(data: &Data, g: usize, seed: u64) -> Vec<usize> {
    let need = data.ncols() + 1;
    let mut labels = Vec::new();
    for attempt in 0..PARTITION_ATTEMPTS {
        let s = if attempt == 0 {
            seed
        } else {
            derive_seed(seed, "kmeans", attempt)
        };
        labels = kmeans(data, g, s);
        let mut sizes = vec![0; g];
        labels.iter().for_each(|&l| sizes[l] += 1);
        if sizes.iter().all(|&m| m >= need) {
            break;
        }
    }
    labels
}

/// Shapes the per-coordinate skewness vector `d` into the `Δ` of `kind`:
/// column `j` collects the coordinates `i ≡ j (mod q)`. This gives the
/// column `d` for one column and `diag(d)` for `q = p`.
pub fn project_skewness(d: &DVector<f64>, kind: ModelKind) -> DMatrix<f64> {
    let p = d.len();
    match kind {
        ModelKind::SymmetricT => DMatrix::zeros(p, 1),
        _ => {
            let q = kind.q(p);
            DMatrix::from_fn(p, q, |i, j| if i % q == j { d[i] } else { 0.0 })
        }
    }
}

struct Moments {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    skew: DVector<f64>,
}

fn moments(rows: &[DVector<f64>]) -> Moments {
    let n = rows.len() as f64;
    let p = rows[0].len();
    let mean = rows.iter().fold(DVector::zeros(p), |a, r| a + r) / n;
    let mut cov = DMatrix::zeros(p, p);
    let mut m3 = DVector::zeros(p);
    for r in rows {
        let c = r - &mean;
        cov += &c * c.transpose();
        m3 += c.map(|v| v * v * v);
    }
    cov /= n;
    let skew = DVector::from_fn(p, |i, _| {
        let v = cov[(i, i)];
        if v > 0.0 {
            m3[i] / n / v.powf(1.5)
        } else {
            0.0
        }
    });
    Moments { mean, cov, skew }
}

/// Starting mixture from a seeded k-means partition. Everything except the
/// shape of `Δ` is independent of `kind`.
pub fn initialize(data: &Data, g: usize, kind: ModelKind, seed: u64) -> Result<MixtureModel> {
    check_data(data)?;
    let n = data.nrows();
    if g == 0 || n <= g {
        return Err(Error::InvalidArgument(format!(
            "need more observations ({n}) than components ({g})"
        )));
    }
    let rows: Vec<DVector<f64>> = data.row_iter().map(|r| r.transpose()).collect();
    let labels = if g == 1 {
        vec![0; n]
    } else {
        partition(data, g, seed)
    };
    let global = moments(&rows);
    let mut weights = Vec::with_capacity(g);
    let mut comps = Vec::with_capacity(g);
    for k in 0..g {
        let members: Vec<DVector<f64>> = rows
            .iter()
            .zip(&labels)
            .filter(|(_, &l)| l == k)
            .map(|(r, _)| r.clone())
            .collect();
        let m = if members.len() > 1 {
            moments(&members)
        } else {
            Moments {
                mean: members
                    .first()
                    .cloned()
                    .unwrap_or_else(|| global.mean.clone()),
                ..moments(&rows)
            }
        };
        let diag = DMatrix::from_diagonal(&m.cov.diagonal());
        let mut sigma = &m.cov * SHRINK + diag * (1.0 - SHRINK);
        let sigma = match SpdMatrix::new(sigma.clone()) {
            Ok(s) => s,
            Err(_) => {
                sigma = &global.cov * SHRINK
                    + DMatrix::from_diagonal(&global.cov.diagonal()) * (1.0 - SHRINK);
                SpdMatrix::new(sigma)?
            }
        };
        let d = DVector::from_fn(m.mean.len(), |i, _| {
            let sign = if m.skew[i] > 0.0 {
                1.0
            } else if m.skew[i] < 0.0 {
                -1.0
            } else {
                0.0
            };
            sign * SKEW_SCALE * sigma.matrix()[(i, i)].sqrt()
        });
        comps.push(CfustParams::new(
            m.mean,
            sigma,
            project_skewness(&d, kind),
            INIT_NU,
        )?);
        weights.push(members.len().max(1) as f64);
    }
    let total: f64 = weights.iter().sum();
    let weights = weights.iter().map(|w| w / total).collect();
    MixtureModel::new(weights, comps, kind)
}
