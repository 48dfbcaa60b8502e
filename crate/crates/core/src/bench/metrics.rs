use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

const MAX_GROUPS: usize = 12;

fn group_count(labels: &[usize]) -> usize {
    labels.iter().max().map_or(0, |m| m + 1)
}

fn contingency(a: &[usize], b: &[usize]) -> Result<Vec<Vec<usize>>> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: b.len(),
            got: a.len(),
        });
    }
    let mut t = vec![vec![0usize; group_count(b)]; group_count(a)];
    for (&x, &y) in a.iter().zip(b) {
        t[x][y] += 1;
    }
    Ok(t)
}

/// Smallest error rate over one-to-one matchings of predicted clusters to
/// classes; unmatched observations count as errors.
pub fn misclassification(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let table = contingency(pred, truth)?;
    let n = pred.len();
    if n == 0 {
        return Ok(0.0);
    }
    let k = table.len();
    let c = table[0].len();
    if k > MAX_GROUPS || c > MAX_GROUPS {
        return Err(Error::TooManyClusters(k.max(c)));
    }
    // best[mask]: most matches with clusters seen so far using classes in `mask`.
    let mut best = vec![0usize; 1 << c];
    for row in &table {
        let prev = best.clone();
        for (mask, &base) in prev.iter().enumerate() {
            for (j, &cnt) in row.iter().enumerate() {
                if mask & (1 << j) == 0 {
                    let m = mask | (1 << j);
                    best[m] = best[m].max(base + cnt);
                }
            }
        }
    }
    let matched = best.iter().copied().max().unwrap_or(0);
    Ok((n - matched) as f64 / n as f64)
}

fn choose2(x: usize) -> f64 {
    let x = x as f64;
    x * (x - 1.0) / 2.0
}

/// Hubert–Arabie adjusted Rand index.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    let table = contingency(a, b)?;
    let n = a.len();
    let index: f64 = table.iter().flatten().map(|&v| choose2(v)).sum();
    let rows: f64 = table.iter().map(|r| choose2(r.iter().sum())).sum();
    let cols: f64 = (0..table.first().map_or(0, Vec::len))
        .map(|j| choose2(table.iter().map(|r| r[j]).sum()))
        .sum();
    let expected = rows * cols / choose2(n);
    let max = 0.5 * (rows + cols);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationAudit {
    /// Pearson correlations, row-major; `None` where a column is constant.
    pub matrix: Vec<Vec<Option<f64>>>,
    pub min_abs_offdiag: Option<f64>,
    pub zero_variance: Vec<String>,
}

pub fn correlation_audit(dataset: &Dataset) -> Result<CorrelationAudit> {
    let x = &dataset.data;
    let (n, d) = (x.nrows(), x.ncols());
    if d < 2 {
        return Err(Error::InvalidArgument(
            "correlation audit needs two or more columns".into(),
        ));
    }
    let centered: Vec<Vec<f64>> = x
        .column_iter()
        .map(|c| {
            let m = c.sum() / n as f64;
            c.iter().map(|v| v - m).collect()
        })
        .collect();
    let ss: Vec<f64> = centered
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum())
        .collect();
    let zero_variance: Vec<String> = (0..d)
        .filter(|&j| ss[j] == 0.0)
        .map(|j| dataset.columns[j].clone())
        .collect();
    let mut matrix = vec![vec![None; d]; d];
    let mut min_abs: Option<f64> = None;
    for i in 0..d {
        for j in 0..d {
            if ss[i] == 0.0 || ss[j] == 0.0 {
                continue;
            }
            let r = if i == j {
                1.0
            } else {
                let s: f64 = centered[i]
                    .iter()
                    .zip(&centered[j])
                    .map(|(a, b)| a * b)
                    .sum();
                (s / (ss[i] * ss[j]).sqrt()).clamp(-1.0, 1.0)
            };
            matrix[i][j] = Some(r);
            if i != j {
                min_abs = Some(min_abs.map_or(r.abs(), |m| m.min(r.abs())));
            }
        }
    }
    Ok(CorrelationAudit {
        matrix,
        min_abs_offdiag: min_abs,
        zero_variance,
    })
}
