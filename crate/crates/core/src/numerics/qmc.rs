//! Randomized rank-1 lattice rules: generating vectors built component by
//! component, random shifts, and the baker's transform.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;

/// Generating vectors are built for this many coordinates.
pub const MAX_LATTICE_DIM: usize = 32;
const FULL_SEARCH_LIMIT: usize = 2048;
const CANDIDATES: usize = 256;

/// Quasi–Monte Carlo budget and seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QmcSpec {
    pub point_count: usize,
    pub seed: u64,
    pub randomization_count: usize,
}

impl Default for QmcSpec {
    fn default() -> Self {
        Self {
            point_count: 1024,
            seed: 0x5eed_cf05,
            randomization_count: 8,
        }
    }
}

impl QmcSpec {
    pub fn new(point_count: usize, seed: u64, randomization_count: usize) -> Result<Self> {
        let spec = Self {
            point_count,
            seed,
            randomization_count,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.point_count < 128 {
            return Err(Error::InvalidArgument(format!(
                "QMC point_count must be at least 128, got {}",
                self.point_count
            )));
        }
        if self.randomization_count < 4 {
            return Err(Error::InvalidArgument(format!(
                "QMC randomization_count must be at least 4, got {}",
                self.randomization_count
            )));
        }
        Ok(())
    }

    /// Same budget, different stream.
    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn total_points(&self) -> usize {
        self.point_count * self.randomization_count
    }
}

/// A point estimate with an estimated 3-sigma error from the randomizations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QmcEstimate {
    pub value: f64,
    pub err_est: f64,
}

/// Shifted lattice points in `[0, 1)^dim` for one randomization.
#[derive(Debug, Clone)]
pub struct ShiftedLattice {
    gen: Arc<Vec<u64>>,
    shift: Vec<f64>,
    count: usize,
}

impl ShiftedLattice {
    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Writes point `k` (after the baker's transform) into `out`, clamped
    /// away from 0 and 1.
    pub fn point(&self, k: usize, out: &mut [f64]) {
        let n = self.count as u64;
        let k = k as u64;
        for ((o, z), s) in out.iter_mut().zip(self.gen.iter()).zip(&self.shift) {
            let x = (((k * z) % n) as f64 / n as f64 + s).fract();
            let tent = 1.0 - (2.0 * x - 1.0).abs();
            *o = tent.clamp(1e-15, 1.0 - 1e-15);
        }
    }
}

fn is_prime(n: usize) -> bool {
    n >= 2
        && (2..)
            .take_while(|d| d * d <= n)
            .all(|d| !n.is_multiple_of(d))
}

/// Largest prime not exceeding `n` (`n ≥ 2`).
pub fn prime_at_most(n: usize) -> usize {
    (2..=n).rev().find(|&m| is_prime(m)).unwrap_or(2)
}

/// Component-by-component generating vector for an `n`-point lattice
/// (n prime) under product weights `γ_j = 0.9^j` in the Korobov space of
/// smoothness 2. Candidates are exhaustive for small `n` and a fixed
/// pseudo-random subset otherwise.
fn cbc_generator(n: usize) -> Vec<u64> {
    let b2 = |x: f64| x * x - x + 1.0 / 6.0;
    let two_pi2 = 2.0 * std::f64::consts::PI * std::f64::consts::PI;
    let table: Vec<f64> = (0..n).map(|k| two_pi2 * b2(k as f64 / n as f64)).collect();
    let candidates: Vec<usize> = if n <= FULL_SEARCH_LIMIT {
        (1..n).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
        (0..CANDIDATES)
            .map(|_| 1 + rng.random_range(0..n - 1))
            .collect()
    };
    let mut prod = vec![1.0f64; n];
    let mut gen = Vec::with_capacity(MAX_LATTICE_DIM);
    let mut gamma = 1.0;
    for _ in 0..MAX_LATTICE_DIM {
        gamma *= 0.9;
        let mut best = (f64::INFINITY, 1usize);
        for &z in &candidates {
            let mut e = 0.0;
            let mut idx = 0usize;
            for p in prod.iter() {
                e += p * (1.0 + gamma * table[idx]);
                idx += z;
                if idx >= n {
                    idx -= n;
                }
            }
            if e < best.0 {
                best = (e, z);
            }
        }
        let z = best.1;
        let mut idx = 0usize;
        for p in prod.iter_mut() {
            *p *= 1.0 + gamma * table[idx];
            idx += z;
            if idx >= n {
                idx -= n;
            }
        }
        gen.push(z as u64);
    }
    gen
}

fn generator(n: usize) -> Arc<Vec<u64>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Vec<u64>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(g) = cache.lock().expect("lattice cache").get(&n) {
        return g.clone();
    }
    let g = Arc::new(cbc_generator(n));
    cache
        .lock()
        .expect("lattice cache")
        .entry(n)
        .or_insert(g)
        .clone()
}

/// One shifted lattice per randomization, derived deterministically from the
/// seed. The lattice size is the largest prime not above `point_count`.
pub fn lattices(spec: &QmcSpec, dim: usize) -> Vec<ShiftedLattice> {
    assert!(
        dim <= MAX_LATTICE_DIM,
        "lattice dimension {dim} unsupported"
    );
    let n = prime_at_most(spec.point_count);
    let gen = generator(n);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..spec.randomization_count)
        .map(|_| ShiftedLattice {
            gen: gen.clone(),
            shift: (0..dim).map(|_| rng.random::<f64>()).collect(),
            count: n,
        })
        .collect()
}

/// For each randomization, averages `f(point, acc)` contributions into a
/// vector of length `width`. Accumulation order is fixed.
pub fn randomized_means<F>(
    spec: &QmcSpec,
    dim: usize,
    width: usize,
    exec: Execution,
    f: F,
) -> Vec<Vec<f64>>
where
    F: Fn(&[f64], &mut [f64]) + Sync + Send,
{
    let rules = lattices(spec, dim.max(1));
    exec.map_slice(&rules, |rule| {
        let mut acc = vec![0.0; width];
        let mut x = vec![0.0; rule.dim()];
        for k in 0..rule.len() {
            rule.point(k, &mut x);
            f(&x, &mut acc);
        }
        let n = rule.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    })
}

/// Mean and 3-sigma error over randomization estimates.
pub fn summarize(values: &[f64]) -> QmcEstimate {
    let r = values.len() as f64;
    let mean = values.iter().sum::<f64>() / r;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1.0)
    } else {
        0.0
    };
    QmcEstimate {
        value: mean,
        err_est: 3.0 * (var / r).sqrt(),
    }
}
