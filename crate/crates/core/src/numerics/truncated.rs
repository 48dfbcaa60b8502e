//! Moments of normal and t vectors truncated to the positive orthant.
//!
//! Everything is organized around a vector `U` with `U | W ~ N(c, S / W)`
//! and a precision `W` that is either fixed at 1 or gamma distributed. For
//! `q ≤ 3` the normal-case orthant probability and moments are evaluated in
//! closed form (Tallis-type formulas over bivariate and trivariate normal
//! CDFs) and `W` is integrated by [`GammaRule`]. For larger `q`, a randomized
//! lattice drives a separation-of-variables sampler with `W` as one extra
//! coordinate.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Gamma};

use super::bvn::{bvn_cdf, tvn_cdf};
use super::linalg::SpdMatrix;
use super::mixing::GammaRule;
use super::mvcdf::{SovFactor, MAX_DIM};
use super::qmc::{self, QmcSpec};
use super::special::{bvn_pdf, inv_mills, log_norm_cdf, norm_cdf, norm_pdf};
use super::{validate_dof, Dof};
use crate::error::{Error, Result};
use crate::exec::Execution;

/// Orthant probabilities below this are reported as degenerate by the
/// closed-form kernels, which then defer to the lattice sampler.
const EXACT_FLOOR: f64 = 1e-250;
/// Log-mass gap (nats) by which retained precision nodes must exceed any
/// underflowed ones.
const SKIP_MARGIN: f64 = 40.0;

/// Law of the precision `W`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Precision {
    /// `W ≡ 1`.
    Unit,
    /// `W ~ Gamma(shape, rate)`.
    Gamma { shape: f64, rate: f64 },
}

impl Precision {
    /// Prior precision of a t law with `nu` degrees of freedom.
    pub fn student(nu: Dof) -> Self {
        if nu.is_infinite() {
            Precision::Unit
        } else {
            Precision::Gamma {
                shape: 0.5 * nu,
                rate: 0.5 * nu,
            }
        }
    }
}

/// How orthant integrals are evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrthantEngine {
    pub qmc: QmcSpec,
    /// Largest dimension handled by the closed-form kernels.
    pub exact_max_dim: usize,
    pub exec: Execution,
}

impl Default for OrthantEngine {
    fn default() -> Self {
        Self {
            qmc: QmcSpec::default(),
            exact_max_dim: 3,
            exec: Execution::Sequential,
        }
    }
}

impl OrthantEngine {
    pub fn new(qmc: QmcSpec) -> Self {
        Self {
            qmc,
            ..Self::default()
        }
    }
}

/// Joint moments of `(W, U)` restricted to `U > 0`, normalized by the
/// restricted mass `z = P(U > 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthantMoments {
    pub log_z: f64,
    /// Estimated 3-sigma error of `z`, relative to `z`; 0 for closed forms.
    pub rel_err: f64,
    pub mean: DVector<f64>,
    pub second: DMatrix<f64>,
    pub e_w: f64,
    pub e_logw: f64,
    pub e_wu: DVector<f64>,
    pub e_wuu: DMatrix<f64>,
}

/// Normal orthant probability and moments with a fixed covariance, for
/// dimensions 1 to 3.
#[derive(Debug, Clone)]
pub struct ExactKernel {
    q: usize,
    s: [[f64; 3]; 3],
    sd: [f64; 3],
}

struct KernelValue {
    log_p: f64,
    mean: [f64; 3],
    second: [[f64; 3]; 3],
}

impl ExactKernel {
    pub fn new(cov: &DMatrix<f64>) -> Self {
        let q = cov.nrows();
        assert!(
            (1..=3).contains(&q),
            "closed-form kernel supports 1 to 3 dimensions"
        );
        let mut s = [[0.0; 3]; 3];
        let mut sd = [0.0; 3];
        for i in 0..q {
            sd[i] = cov[(i, i)].sqrt();
            for j in 0..q {
                s[i][j] = cov[(i, j)];
            }
        }
        Self { q, s, sd }
    }

    fn corr(&self, i: usize, j: usize) -> f64 {
        self.s[i][j] / (self.sd[i] * self.sd[j])
    }

    /// `P(Y < b)` for `Y ~ N(0, S[idx, idx])` given a conditional shift.
    fn cdf_sub(&self, idx: &[usize], b: &[f64], cov: &[[f64; 3]; 3]) -> f64 {
        match idx.len() {
            0 => 1.0,
            1 => norm_cdf(b[0] / cov[0][0].sqrt()),
            2 => {
                let s0 = cov[0][0].sqrt();
                let s1 = cov[1][1].sqrt();
                bvn_cdf(
                    b[0] / s0,
                    b[1] / s1,
                    (cov[0][1] / (s0 * s1)).clamp(-1.0, 1.0),
                )
            }
            _ => unreachable!("conditional dimension above 2"),
        }
    }

    /// Probability `P(X > 0)` and conditional moments for `X ~ N(m, S)`.
    fn eval(&self, m: &[f64]) -> Option<KernelValue> {
        let q = self.q;
        if q == 1 {
            let s2 = self.s[0][0];
            let sd = self.sd[0];
            let alpha = m[0] / sd;
            let h = inv_mills(alpha);
            let mean = m[0] + sd * h;
            let second = s2 + m[0] * m[0] + m[0] * sd * h;
            let mut sec = [[0.0; 3]; 3];
            sec[0][0] = second.max(mean * mean);
            return Some(KernelValue {
                log_p: log_norm_cdf(alpha),
                mean: [mean.max(0.0), 0.0, 0.0],
                second: sec,
            });
        }
        let p = match q {
            2 => bvn_cdf(m[0] / self.sd[0], m[1] / self.sd[1], self.corr(0, 1)),
            _ => tvn_cdf(
                [m[0] / self.sd[0], m[1] / self.sd[1], m[2] / self.sd[2]],
                self.corr(0, 1),
                self.corr(0, 2),
                self.corr(1, 2),
            ),
        };
        if !(p > EXACT_FLOOR) {
            return None;
        }
        let s = &self.s;
        let a: Vec<f64> = m[..q].iter().map(|v| -v).collect();
        // F_j: marginal density at the boundary times conditional mass.
        let mut f1 = [0.0; 3];
        for j in 0..q {
            let others: Vec<usize> = (0..q).filter(|&k| k != j).collect();
            let mut b = [0.0; 2];
            let mut cov = [[0.0; 3]; 3];
            for (x, &k) in others.iter().enumerate() {
                b[x] = s[k][j] / s[j][j] * a[j] - a[k];
                for (y, &l) in others.iter().enumerate() {
                    cov[x][y] = s[k][l] - s[k][j] * s[j][l] / s[j][j];
                }
            }
            f1[j] = norm_pdf(a[j] / self.sd[j]) / self.sd[j]
                * self.cdf_sub(&others, &b[..others.len()], &cov);
        }
        // F_jk: pairwise boundary densities times conditional mass.
        let mut f2 = [[0.0; 3]; 3];
        for j in 0..q {
            for k in (j + 1)..q {
                let dens = bvn_pdf(a[j] / self.sd[j], a[k] / self.sd[k], self.corr(j, k))
                    / (self.sd[j] * self.sd[k]);
                let rest = if q == 3 {
                    let l = 3 - j - k;
                    let det = s[j][j] * s[k][k] - s[j][k] * s[j][k];
                    let gj = (s[l][j] * s[k][k] - s[l][k] * s[j][k]) / det;
                    let gk = (s[l][k] * s[j][j] - s[l][j] * s[j][k]) / det;
                    let var = s[l][l] - gj * s[j][l] - gk * s[k][l];
                    norm_cdf((gj * a[j] + gk * a[k] - a[l]) / var.max(1e-300).sqrt())
                } else {
                    1.0
                };
                f2[j][k] = dens * rest;
                f2[k][j] = f2[j][k];
            }
        }
        let mut ey = [0.0; 3];
        for i in 0..q {
            for j in 0..q {
                ey[i] += s[i][j] * f1[j];
            }
        }
        let mut eyy = [[0.0; 3]; 3];
        for i in 0..q {
            for l in i..q {
                let mut v = s[i][l] * p;
                for j in 0..q {
                    v += s[i][j] * s[l][j] * a[j] * f1[j] / s[j][j];
                    for k in 0..q {
                        if k != j {
                            v += s[i][j] * (s[l][k] - s[j][k] * s[l][j] / s[j][j]) * f2[j][k];
                        }
                    }
                }
                eyy[i][l] = v;
                eyy[l][i] = v;
            }
        }
        let mut mean = [0.0; 3];
        let mut second = [[0.0; 3]; 3];
        for i in 0..q {
            mean[i] = m[i] + ey[i] / p;
        }
        for i in 0..q {
            for l in 0..q {
                second[i][l] = m[i] * m[l] + (m[i] * ey[l] + ey[i] * m[l] + eyy[i][l]) / p;
            }
        }
        Some(KernelValue {
            log_p: p.ln(),
            mean,
            second,
        })
    }
}

/// Accumulates node contributions with a running log-scale offset.
struct Accumulator {
    q: usize,
    log_ref: f64,
    z: f64,
    zw: f64,
    zlog: f64,
    m1: DVector<f64>,
    m1w: DVector<f64>,
    m2: DMatrix<f64>,
    m2w: DMatrix<f64>,
}

impl Accumulator {
    fn new(q: usize) -> Self {
        Self {
            q,
            log_ref: f64::NEG_INFINITY,
            z: 0.0,
            zw: 0.0,
            zlog: 0.0,
            m1: DVector::zeros(q),
            m1w: DVector::zeros(q),
            m2: DMatrix::zeros(q, q),
            m2w: DMatrix::zeros(q, q),
        }
    }

    fn rescale(&mut self, new_ref: f64) {
        let f = (self.log_ref - new_ref).exp();
        self.z *= f;
        self.zw *= f;
        self.zlog *= f;
        self.m1 *= f;
        self.m1w *= f;
        self.m2 *= f;
        self.m2w *= f;
        self.log_ref = new_ref;
    }

    /// Adds a node with log-mass `log_t`, precision `w`, and conditional
    /// moments of `U` (already on the `U` scale).
    fn add(&mut self, log_t: f64, w: f64, mean: &[f64], second: &[[f64; 3]; 3]) {
        if log_t == f64::NEG_INFINITY {
            return;
        }
        if log_t > self.log_ref {
            self.rescale(log_t);
        }
        let t = (log_t - self.log_ref).exp();
        self.z += t;
        self.zw += t * w;
        self.zlog += t * w.ln();
        for i in 0..self.q {
            self.m1[i] += t * mean[i];
            self.m1w[i] += t * w * mean[i];
            for j in 0..self.q {
                self.m2[(i, j)] += t * second[i][j];
                self.m2w[(i, j)] += t * w * second[i][j];
            }
        }
    }

    fn finish(self, log_scale: f64, rel_err: f64) -> Result<OrthantMoments> {
        if !(self.z > 0.0) || !self.z.is_finite() {
            return Err(Error::DegenerateOrthant(0.0));
        }
        let z = self.z;
        let mut second = self.m2 / z;
        let mut e_wuu = self.m2w / z;
        super::linalg::symmetrize(&mut second);
        super::linalg::symmetrize(&mut e_wuu);
        Ok(OrthantMoments {
            log_z: self.log_ref + z.ln() + log_scale,
            rel_err,
            mean: self.m1 / z,
            second,
            e_w: self.zw / z,
            e_logw: self.zlog / z,
            e_wu: self.m1w / z,
            e_wuu,
        })
    }
}

/// Moments of `(W, U)` given `U > 0`, where `U | W ~ N(c, cov / W)`.
pub fn orthant_moments(
    c: &[f64],
    cov: &SpdMatrix,
    precision: Precision,
    engine: &OrthantEngine,
) -> Result<OrthantMoments> {
    let q = cov.dim();
    if c.len() != q {
        return Err(Error::DimensionMismatch {
            expected: q,
            got: c.len(),
        });
    }
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    if q <= engine.exact_max_dim.min(3) {
        let kernel = ExactKernel::new(cov.matrix());
        match exact_moments(&kernel, c, precision) {
            Ok(m) => return Ok(m),
            Err(Error::DegenerateOrthant(_)) => {}
            Err(e) => return Err(e),
        }
    }
    lattice_moments(c, cov, precision, engine)
}

/// Closed-form kernel integrated over the precision rule.
pub fn exact_moments(
    kernel: &ExactKernel,
    c: &[f64],
    precision: Precision,
) -> Result<OrthantMoments> {
    let q = kernel.q;
    let mut acc = Accumulator::new(q);
    let mut m = [0.0; 3];
    // Largest log-mass bound among nodes whose probability underflowed.
    let mut skipped = f64::NEG_INFINITY;
    let mut node = |acc: &mut Accumulator, log_weight: f64, w: f64| {
        let sw = w.sqrt();
        for i in 0..q {
            m[i] = sw * c[i];
        }
        let Some(kv) = kernel.eval(&m[..q]) else {
            skipped = skipped.max(log_weight + EXACT_FLOOR.ln());
            return;
        };
        let mut mean = [0.0; 3];
        let mut second = [[0.0; 3]; 3];
        for i in 0..q {
            mean[i] = kv.mean[i] / sw;
            for j in 0..q {
                second[i][j] = kv.second[i][j] / w;
            }
        }
        acc.add(log_weight + kv.log_p, w, &mean, &second);
    };
    match precision {
        Precision::Unit => node(&mut acc, 0.0, 1.0),
        Precision::Gamma { shape, rate } => {
            let rule = GammaRule::cached(shape);
            for (x, wt) in rule.nodes.iter().zip(&rule.weights) {
                node(&mut acc, wt.ln(), x / rate);
            }
        }
    }
    // Dropped nodes are harmless only when the retained mass dwarfs them.
    let retained = acc.log_ref + acc.z.ln();
    if skipped > f64::NEG_INFINITY && !(retained > skipped + SKIP_MARGIN) {
        return Err(Error::DegenerateOrthant(0.0));
    }
    acc.finish(0.0, 0.0)
}

type QuantileKey = (u64, u64, usize, usize);
type QuantileCache = Mutex<HashMap<QuantileKey, Arc<Vec<Vec<f64>>>>>;

/// Gamma(shape, 1) quantiles of the lattice's precision coordinate, cached per
/// shape and lattice.
fn precision_quantiles(shape: f64, spec: &QmcSpec, dim: usize) -> Arc<Vec<Vec<f64>>> {
    static CACHE: OnceLock<QuantileCache> = OnceLock::new();
    let key = (
        shape.to_bits(),
        spec.seed,
        spec.point_count * 64 + dim,
        spec.randomization_count,
    );
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(v) = cache.lock().expect("quantile cache").get(&key) {
        return v.clone();
    }
    let gamma = Gamma::new(shape, 1.0).expect("positive shape");
    let rules = qmc::lattices(spec, dim);
    let mut u = vec![0.0; dim];
    let table: Vec<Vec<f64>> = rules
        .iter()
        .map(|r| {
            (0..r.len())
                .map(|k| {
                    r.point(k, &mut u);
                    gamma.inverse_cdf(u[dim - 1]).max(1e-300)
                })
                .collect()
        })
        .collect();
    let table = Arc::new(table);
    let mut guard = cache.lock().expect("quantile cache");
    if guard.len() > 256 {
        guard.clear();
    }
    guard.entry(key).or_insert(table).clone()
}

/// Separation-of-variables estimate over randomized lattices.
pub fn lattice_moments(
    c: &[f64],
    cov: &SpdMatrix,
    precision: Precision,
    engine: &OrthantEngine,
) -> Result<OrthantMoments> {
    let q = cov.dim();
    if q > MAX_DIM {
        return Err(Error::InvalidArgument(format!(
            "dimension {q} exceeds {MAX_DIM}"
        )));
    }
    let spec = &engine.qmc;
    spec.validate()?;
    let factor = SovFactor::new(c, cov.matrix())?;
    let (dim, quantiles, rate) = match precision {
        Precision::Unit => (q, None, 1.0),
        Precision::Gamma { shape, rate } => {
            (q + 1, Some(precision_quantiles(shape, spec, q + 1)), rate)
        }
    };
    let width = 3 + 2 * q + 2 * q * q;
    let rules = qmc::lattices(spec, dim);
    let per_rule: Vec<(Vec<f64>, f64)> = engine.exec.map_range(rules.len(), |r| {
        let rule = &rules[r];
        let mut acc = vec![0.0; width];
        let mut u = vec![0.0; dim];
        let mut z = [0.0; MAX_DIM];
        let mut x = [0.0; MAX_DIM];
        for k in 0..rule.len() {
            rule.point(k, &mut u);
            let w = match &quantiles {
                Some(t) => t[r][k] / rate,
                None => 1.0,
            };
            let sw = w.sqrt();
            let p = factor.sample(&u[..q], sw, &mut z);
            if p == 0.0 {
                continue;
            }
            // U = c - Z/√W in original coordinate order.
            for i in 0..q {
                let orig = factor.perm[i];
                x[orig] = (c[orig] - z[i] / sw).max(0.0);
            }
            acc[0] += p;
            acc[1] += p * w;
            acc[2] += p * w.ln();
            for i in 0..q {
                acc[3 + i] += p * x[i];
                acc[3 + q + i] += p * w * x[i];
                for j in 0..q {
                    acc[3 + 2 * q + i * q + j] += p * x[i] * x[j];
                    acc[3 + 2 * q + q * q + i * q + j] += p * w * x[i] * x[j];
                }
            }
        }
        let n = rule.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        let z0 = acc[0];
        (acc, z0)
    });
    let zs: Vec<f64> = per_rule.iter().map(|r| r.1).collect();
    let est = qmc::summarize(&zs);
    let r = per_rule.len() as f64;
    let mut tot = vec![0.0; width];
    for (acc, _) in &per_rule {
        for (t, a) in tot.iter_mut().zip(acc) {
            *t += a / r;
        }
    }
    let z = tot[0];
    if !(z > 0.0) {
        return Err(Error::DegenerateOrthant(z));
    }
    let mean = DVector::from_fn(q, |i, _| tot[3 + i] / z);
    let e_wu = DVector::from_fn(q, |i, _| tot[3 + q + i] / z);
    let mut second = DMatrix::from_fn(q, q, |i, j| tot[3 + 2 * q + i * q + j] / z);
    let mut e_wuu = DMatrix::from_fn(q, q, |i, j| tot[3 + 2 * q + q * q + i * q + j] / z);
    super::linalg::symmetrize(&mut second);
    super::linalg::symmetrize(&mut e_wuu);
    Ok(OrthantMoments {
        log_z: z.ln(),
        rel_err: est.err_est / z,
        mean,
        second,
        e_w: tot[1] / z,
        e_logw: tot[2] / z,
        e_wu,
        e_wuu,
    })
}

/// Positive-orthant truncation of a normal (`nu = ∞`) or t vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedMoments {
    /// `P(X > 0)`.
    pub prob: f64,
    /// `E[X | X > 0]`.
    pub m1: DVector<f64>,
    /// `E[X Xᵀ | X > 0]`.
    pub m2: DMatrix<f64>,
    /// Estimated 3-sigma error of `prob`.
    pub err_est: f64,
}

/// Truncated first and second moments of `X ~ t(mean, sigma, nu)` on the
/// positive orthant.
pub fn trunc_moments(
    mean: &DVector<f64>,
    sigma: &SpdMatrix,
    nu: Dof,
    qmc: &QmcSpec,
) -> Result<TruncatedMoments> {
    validate_dof(nu)?;
    qmc.validate()?;
    if sigma.dim() > MAX_DIM {
        return Err(Error::InvalidArgument(format!(
            "dimension {} exceeds {MAX_DIM}",
            sigma.dim()
        )));
    }
    let engine = OrthantEngine {
        qmc: *qmc,
        exact_max_dim: 3,
        exec: Execution::Parallel,
    };
    let m = orthant_moments(mean.as_slice(), sigma, Precision::student(nu), &engine)?;
    let prob = m.log_z.exp();
    if prob < 1e-12 {
        return Err(Error::DegenerateOrthant(prob));
    }
    Ok(TruncatedMoments {
        prob,
        m1: m.mean,
        m2: m.second,
        err_est: m.rel_err * prob,
    })
}

/// Mean and raw second-moment matrix of `|Z|`, `Z ~ N(0, I_q)`.
pub fn half_normal_moments(q: usize) -> (DVector<f64>, DMatrix<f64>) {
    let m = (2.0 / std::f64::consts::PI).sqrt();
    let mut second = DMatrix::from_element(q, q, m * m);
    second.fill_diagonal(1.0);
    (DVector::from_element(q, m), second)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// Plain Monte Carlo of the truncated normal moments with standard errors.
    fn mc_truncated(
        m: &[f64],
        cov: &DMatrix<f64>,
        n: usize,
        seed: u64,
    ) -> (f64, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let q = m.len();
        let l = cov.clone().cholesky().unwrap().l();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut hits = 0usize;
        let mut s1 = vec![0.0; q];
        let mut s1sq = vec![0.0; q];
        let mut s2 = vec![0.0; q * q];
        let mut s2sq = vec![0.0; q * q];
        let mut z = vec![0.0; q];
        for _ in 0..n {
            for zi in z.iter_mut() {
                *zi = rng.sample(StandardNormal);
            }
            let x: Vec<f64> = (0..q)
                .map(|i| m[i] + (0..=i).map(|k| l[(i, k)] * z[k]).sum::<f64>())
                .collect();
            if x.iter().all(|&v| v > 0.0) {
                hits += 1;
                for i in 0..q {
                    s1[i] += x[i];
                    s1sq[i] += x[i] * x[i];
                    for j in 0..q {
                        let v = x[i] * x[j];
                        s2[i * q + j] += v;
                        s2sq[i * q + j] += v * v;
                    }
                }
            }
        }
        let h = hits as f64;
        let mean1: Vec<f64> = s1.iter().map(|s| s / h).collect();
        let se1: Vec<f64> = (0..q)
            .map(|i| ((s1sq[i] / h - mean1[i].powi(2)) / h).sqrt())
            .collect();
        let mean2: Vec<f64> = s2.iter().map(|s| s / h).collect();
        let se2: Vec<f64> = (0..q * q)
            .map(|k| ((s2sq[k] / h - mean2[k].powi(2)) / h).sqrt())
            .collect();
        (h / n as f64, mean1, se1, mean2, se2)
    }

    fn spd(rows: &[Vec<f64>]) -> SpdMatrix {
        SpdMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn half_normal_closed_form() {
        let (m, s) = half_normal_moments(1);
        assert!((m[0] - 0.797_884_560_8).abs() < 1e-10);
        assert_eq!(s[(0, 0)], 1.0);
        let (_, s3) = half_normal_moments(3);
        for i in 0..3 {
            assert_eq!(s3[(i, i)], 1.0);
        }
    }

    #[test]
    fn half_normal_matches_monte_carlo() {
        let (m, s) = half_normal_moments(2);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let mut acc = [0.0; 5];
        for _ in 0..n {
            let a: f64 = rng.sample::<f64, _>(StandardNormal).abs();
            let b: f64 = rng.sample::<f64, _>(StandardNormal).abs();
            acc[0] += a;
            acc[1] += b;
            acc[2] += a * a;
            acc[3] += a * b;
            acc[4] += b * b;
        }
        let nf = n as f64;
        assert!((acc[0] / nf - m[0]).abs() < 3e-3);
        assert!((acc[1] / nf - m[1]).abs() < 3e-3);
        assert!((acc[2] / nf - s[(0, 0)]).abs() < 3e-3);
        assert!((acc[3] / nf - s[(0, 1)]).abs() < 3e-3);
        assert!((acc[4] / nf - s[(1, 1)]).abs() < 3e-3);
    }

    #[test]
    fn univariate_half_normal() {
        let t = trunc_moments(
            &DVector::from_element(1, 0.0),
            &SpdMatrix::identity(1),
            f64::INFINITY,
            &QmcSpec::default(),
        )
        .unwrap();
        assert!((t.prob - 0.5).abs() < 1e-15);
        assert!((t.m1[0] - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-14);
        assert!((t.m2[(0, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn independent_pair() {
        let t = trunc_moments(
            &DVector::zeros(2),
            &SpdMatrix::identity(2),
            f64::INFINITY,
            &QmcSpec::default(),
        )
        .unwrap();
        let h = (2.0 / std::f64::consts::PI).sqrt();
        assert!((t.prob - 0.25).abs() < 1e-14);
        assert!((t.m1[0] - h).abs() < 1e-13 && (t.m1[1] - h).abs() < 1e-13);
        assert!((t.m2[(0, 1)] - h * h).abs() < 1e-13);
        assert!((t.m2[(0, 0)] - 1.0).abs() < 1e-13);
    }

    #[test]
    fn exact_kernels_match_monte_carlo() {
        let cases: Vec<(Vec<f64>, SpdMatrix)> = vec![
            (vec![0.4, -0.3], spd(&[vec![1.0, 0.6], vec![0.6, 2.0]])),
            (vec![-0.8, 0.5], spd(&[vec![0.5, -0.3], vec![-0.3, 1.0]])),
            (
                vec![0.2, -0.4, 0.9],
                spd(&[
                    vec![1.0, 0.5, 0.3],
                    vec![0.5, 1.5, -0.2],
                    vec![0.3, -0.2, 0.8],
                ]),
            ),
        ];
        for (idx, (m, s)) in cases.iter().enumerate() {
            let q = m.len();
            let ex = exact_moments(&ExactKernel::new(s.matrix()), m, Precision::Unit).unwrap();
            let (p, m1, se1, m2, se2) = mc_truncated(m, s.matrix(), 2_000_000, 40 + idx as u64);
            let pz = ex.log_z.exp();
            assert!(
                (pz - p).abs() < 4.0 * (p * (1.0 - p) / 2e6).sqrt(),
                "case {idx}: p {pz} vs {p}"
            );
            for i in 0..q {
                assert!(
                    (ex.mean[i] - m1[i]).abs() < 4.0 * se1[i],
                    "case {idx} m1[{i}] {} vs {}",
                    ex.mean[i],
                    m1[i]
                );
                for j in 0..q {
                    let k = i * q + j;
                    assert!(
                        (ex.second[(i, j)] - m2[k]).abs() < 4.0 * se2[k],
                        "case {idx} m2[{i},{j}] {} vs {}",
                        ex.second[(i, j)],
                        m2[k]
                    );
                }
            }
        }
    }

    #[test]
    fn lattice_agrees_with_exact() {
        let s = spd(&[
            vec![1.0, 0.5, 0.3],
            vec![0.5, 1.5, -0.2],
            vec![0.3, -0.2, 0.8],
        ]);
        let c = [0.2, -0.4, 0.9];
        let engine = OrthantEngine::new(QmcSpec::new(4096, 3, 8).unwrap());
        for prec in [
            Precision::Unit,
            Precision::Gamma {
                shape: 3.5,
                rate: 2.0,
            },
        ] {
            let ex = exact_moments(&ExactKernel::new(s.matrix()), &c, prec).unwrap();
            let la = lattice_moments(&c, &s, prec, &engine).unwrap();
            assert!(
                (ex.log_z - la.log_z).abs() < 2e-3,
                "{prec:?}: {} vs {}",
                ex.log_z,
                la.log_z
            );
            assert!((ex.e_w - la.e_w).abs() < 2e-3);
            assert!((ex.e_logw - la.e_logw).abs() < 2e-3);
            for i in 0..3 {
                assert!((ex.mean[i] - la.mean[i]).abs() < 3e-3);
                assert!((ex.e_wu[i] - la.e_wu[i]).abs() < 3e-3);
                for j in 0..3 {
                    assert!((ex.e_wuu[(i, j)] - la.e_wuu[(i, j)]).abs() < 5e-3);
                }
            }
        }
    }

    #[test]
    fn underflowed_precision_nodes_are_dropped() {
        // Large precisions push the orthant probability below the floor; the
        // small ones carry the mass, so the closed form must still be used.
        use statrs::distribution::Continuous;
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]);
        let c = [-12.0, -10.0];
        let kernel = ExactKernel::new(&cov);
        assert!(kernel.eval(&[c[0] * 4.0, c[1] * 4.0]).is_none());
        let m = exact_moments(
            &kernel,
            &c,
            Precision::Gamma {
                shape: 1.5,
                rate: 1.5,
            },
        )
        .unwrap();
        let gamma = Gamma::new(1.5, 1.5).unwrap();
        let z = crate::numerics::quad::integrate(
            |w: f64| {
                if w <= 0.0 {
                    0.0
                } else {
                    gamma.pdf(w) * bvn_cdf(c[0] * w.sqrt(), c[1] * w.sqrt(), 0.3)
                }
            },
            0.0,
            40.0,
            1e-16,
            2000,
        );
        assert!((m.log_z - z.ln()).abs() < 1e-6, "{} vs {}", m.log_z, z.ln());
    }

    #[test]
    fn t_case_matches_rejection_sampling() {
        // X = mean + L z / sqrt(w), w ~ Gamma(nu/2, nu/2), accepted when X > 0.
        let s = spd(&[vec![1.0, 0.6], vec![0.6, 1.3]]);
        let mean = DVector::from_column_slice(&[0.3, -0.2]);
        let nu = 5.0;
        let t = trunc_moments(&mean, &s, nu, &QmcSpec::default()).unwrap();
        let l = s.chol().clone();
        let gamma = rand_distr::Gamma::new(nu / 2.0, 2.0 / nu).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 1_000_000;
        let (mut hits, mut s1, mut s1sq, mut s11, mut s11sq) =
            (0usize, [0.0; 2], [0.0; 2], 0.0, 0.0);
        for _ in 0..n {
            let w: f64 = rng.sample(gamma);
            let z0: f64 = rng.sample(StandardNormal);
            let z1: f64 = rng.sample(StandardNormal);
            let x0 = mean[0] + l[(0, 0)] * z0 / w.sqrt();
            let x1 = mean[1] + (l[(1, 0)] * z0 + l[(1, 1)] * z1) / w.sqrt();
            if x0 > 0.0 && x1 > 0.0 {
                hits += 1;
                s1[0] += x0;
                s1[1] += x1;
                s1sq[0] += x0 * x0;
                s1sq[1] += x1 * x1;
                s11 += x0 * x1;
                s11sq += (x0 * x1).powi(2);
            }
        }
        let h = hits as f64;
        let p = h / n as f64;
        assert!((t.prob - p).abs() < 3.0 * (p * (1.0 - p) / n as f64).sqrt());
        for i in 0..2 {
            let mu = s1[i] / h;
            let se = ((s1sq[i] / h - mu * mu) / h).sqrt();
            assert!(
                (t.m1[i] - mu).abs() < 3.0 * se,
                "m1[{i}] {} vs {mu}",
                t.m1[i]
            );
        }
        let mu = s11 / h;
        let se = ((s11sq / h - mu * mu) / h).sqrt();
        assert!((t.m2[(0, 1)] - mu).abs() < 3.0 * se);
    }

    #[test]
    fn degenerate_orthant_is_reported() {
        let r = trunc_moments(
            &DVector::from_element(1, -12.0),
            &SpdMatrix::identity(1),
            f64::INFINITY,
            &QmcSpec::default(),
        );
        assert!(matches!(r, Err(Error::DegenerateOrthant(_))));
    }

    #[test]
    fn far_tail_univariate_is_stable() {
        let m = exact_moments(
            &ExactKernel::new(&DMatrix::identity(1, 1)),
            &[-60.0],
            Precision::Gamma {
                shape: 3.0,
                rate: 1.5,
            },
        )
        .unwrap();
        assert!(m.log_z.is_finite());
        assert!(m.mean[0] > 0.0 && m.mean[0].is_finite());
        // Mass far in the tail forces the precision well below its prior mean.
        assert!(m.e_w < 0.1 * 2.0);
    }
}
