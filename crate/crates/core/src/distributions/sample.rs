use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::CfustParams;

/// Realizations of the latent skewness term `Δ|U₀|`, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SkewTermSample {
    pub draws: DMatrix<f64>,
}

fn precision<R: Rng>(nu: f64, rng: &mut R) -> f64 {
    if nu.is_infinite() {
        1.0
    } else {
        Gamma::new(0.5 * nu, 2.0 / nu)
            .expect("valid dof")
            .sample(rng)
    }
}

/// `n` draws of `Y = μ + Δ|U₀| + U₁`; rows are observations.
pub fn sample(params: &CfustParams, n: usize, seed: u64) -> DMatrix<f64> {
    let (p, q) = (params.p(), params.q());
    let l = params.sigma.chol();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = DMatrix::zeros(n, p);
    let mut u0 = vec![0.0f64; q];
    let mut z = vec![0.0f64; p];
    for row in 0..n {
        let w = precision(params.nu, &mut rng);
        let s = w.sqrt().recip();
        for v in u0.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        for v in z.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        for i in 0..p {
            let mut y = params.mu[i];
            for (j, u) in u0.iter().enumerate() {
                y += params.delta[(i, j)] * u.abs() * s;
            }
            for (k, zk) in z.iter().enumerate().take(i + 1) {
                y += l[(i, k)] * zk * s;
            }
            out[(row, i)] = y;
        }
    }
    out
}

/// `n` draws of `Δ|U₀|` alone.
pub fn skew_term_sample(params: &CfustParams, n: usize, seed: u64) -> SkewTermSample {
    let (p, q) = (params.p(), params.q());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws = DMatrix::zeros(n, p);
    let mut u0 = vec![0.0; q];
    for row in 0..n {
        let s = precision(params.nu, &mut rng).sqrt().recip();
        for v in u0.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = z.abs() * s;
        }
        for i in 0..p {
            draws[(row, i)] = (0..q).map(|j| params.delta[(i, j)] * u0[j]).sum();
        }
    }
    SkewTermSample { draws }
}

/// Numerical rank of the centered draws: singular values above
/// `tol · σ_max` are counted, and all-zero draws have rank 0.
pub fn skew_direction_rank(samples: &SkewTermSample, tol: f64) -> usize {
    let x = &samples.draws;
    let n = x.nrows();
    if n == 0 {
        return 0;
    }
    let means = x.row_mean();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= &means;
    }
    let sv = centered.singular_values();
    let top = sv.max();
    if !(top > 0.0) {
        return 0;
    }
    sv.iter().filter(|&&s| s > tol * top).count()
}
