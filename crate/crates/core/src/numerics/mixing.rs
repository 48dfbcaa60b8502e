//! Quadrature over the gamma-distributed precision of a normal scale mixture.
//!
//! Expectations `E[h(W)]` with `W ~ Gamma(shape, rate)` are computed by the
//! trapezoid rule in `v = ln(W · rate / shape)`. The transformed density is
//! smooth and decays doubly exponentially on the right and exponentially on
//! the left, so the trapezoid rule converges geometrically for integrands
//! that are analytic in `v`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

/// Truncation depth of the log-density relative to its peak.
const LOG_DEPTH: f64 = 38.0;
const STEP_SCALE: f64 = 0.5;
const STEP_CAP: f64 = 0.2;

/// Nodes and normalized weights for a unit-rate gamma law.
#[derive(Debug, Clone)]
pub struct GammaRule {
    pub shape: f64,
    /// Nodes `x_k` for rate 1; with rate `b`, the precision is `x_k / b`.
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GammaRule {
    pub fn new(shape: f64) -> Self {
        assert!(
            shape > 0.0 && shape.is_finite(),
            "gamma shape must be positive"
        );
        let a = shape;
        let step = (STEP_SCALE / a.sqrt()).min(STEP_CAP);
        let g = |v: f64| a * (v - v.exp() + 1.0);
        let v_hi = bisect(
            |v| g(v) + LOG_DEPTH,
            0.0,
            1.0 + (LOG_DEPTH / a + 1.0).ln() + 1.0,
        );
        let v_lo = bisect(|v| g(v) + LOG_DEPTH, -(LOG_DEPTH / a) - 2.0, 0.0);
        let j_lo = (v_lo / step).floor() as i64;
        let j_hi = (v_hi / step).ceil() as i64;
        let mut nodes = Vec::with_capacity((j_hi - j_lo + 1) as usize);
        let mut weights = Vec::with_capacity(nodes.capacity());
        for j in j_lo..=j_hi {
            let v = j as f64 * step;
            nodes.push(a * v.exp());
            weights.push(g(v).exp());
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Self {
            shape,
            nodes,
            weights,
        }
    }

    /// Shared instance for a shape, built once per distinct value.
    pub fn cached(shape: f64) -> Arc<GammaRule> {
        static CACHE: OnceLock<Mutex<HashMap<u64, Arc<GammaRule>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let key = shape.to_bits();
        if let Some(r) = cache.lock().expect("rule cache").get(&key) {
            return r.clone();
        }
        let rule = Arc::new(GammaRule::new(shape));
        let mut guard = cache.lock().expect("rule cache");
        if guard.len() > 4096 {
            guard.clear();
        }
        guard.entry(key).or_insert(rule).clone()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `E[h(W)]` for `W ~ Gamma(shape, rate)`.
    pub fn expect<F: FnMut(f64) -> f64>(&self, rate: f64, mut h: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * h(x / rate))
            .sum()
    }
}

fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> f64 {
    let f_lo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == (f_lo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
