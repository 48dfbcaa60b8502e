//! Clustering comparison harness: dataset ingestion, variable subsets,
//! paired fits from shared starts, and report generation.

mod metrics;
mod report;

pub use metrics::{adjusted_rand_index, correlation_audit, misclassification, CorrelationAudit};
pub use report::{emit_report, load_report, report_csv, ReportFormat};

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::distributions::ModelKind;
use crate::emfit::{fit, FitConfig};
use crate::error::{Error, Result};
use crate::exec::Execution;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub columns: Vec<String>,
    /// `n × d`, rows are observations.
    pub data: DMatrix<f64>,
    pub labels: Vec<usize>,
    pub label_names: Vec<String>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn d(&self) -> usize {
        self.data.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.label_names.len()
    }

    /// Columns `subset` as a new matrix.
    pub fn select(&self, subset: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(self.n(), subset.len(), |i, j| self.data[(i, subset[j])])
    }
}

/// Reads a headed CSV. Without `features`, every column other than the label
/// whose first value parses as a number is used. Without a label column all
/// rows share one class.
pub fn load_csv(
    path: impl AsRef<Path>,
    label_column: Option<&str>,
    features: Option<&[String]>,
) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let records: Vec<csv::StringRecord> =
        reader.records().collect::<std::result::Result<_, _>>()?;
    let label_idx = label_column
        .map(|l| {
            header
                .iter()
                .position(|h| h == l)
                .ok_or_else(|| Error::MissingColumn(l.to_string()))
        })
        .transpose()?;
    if records.is_empty() {
        return Err(Error::EmptyData);
    }
    let feature_idx: Vec<usize> = match features {
        Some(names) => names
            .iter()
            .map(|f| {
                header
                    .iter()
                    .position(|h| h == f)
                    .ok_or_else(|| Error::MissingColumn(f.clone()))
            })
            .collect::<Result<_>>()?,
        None => (0..header.len())
            .filter(|&j| {
                Some(j) != label_idx && records[0].get(j).is_some_and(|v| v.parse::<f64>().is_ok())
            })
            .collect(),
    };
    if feature_idx.is_empty() {
        return Err(Error::InvalidArgument("no numeric feature columns".into()));
    }
    let n = records.len();
    let mut data = DMatrix::zeros(n, feature_idx.len());
    let mut labels = Vec::with_capacity(n);
    let mut label_names: Vec<String> = Vec::new();
    for (i, rec) in records.iter().enumerate() {
        for (j, &c) in feature_idx.iter().enumerate() {
            let v = rec
                .get(c)
                .and_then(|s| s.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    row: i + 1,
                    col: header[c].clone(),
                })?;
            data[(i, j)] = v;
        }
        let l = match label_idx {
            Some(c) => rec.get(c).unwrap_or("").to_string(),
            None => "all".to_string(),
        };
        if l.is_empty() {
            return Err(Error::Parse {
                row: i + 1,
                col: header[label_idx.unwrap_or(0)].clone(),
            });
        }
        let k = match label_names.iter().position(|x| *x == l) {
            Some(k) => k,
            None => {
                label_names.push(l);
                label_names.len() - 1
            }
        };
        labels.push(k);
    }
    if n < 2 {
        return Err(Error::EmptyData);
    }
    Ok(Dataset {
        name: path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        columns: feature_idx.iter().map(|&c| header[c].clone()).collect(),
        data,
        labels,
        label_names,
    })
}

/// All subsets of `0..d` with sizes in `min_size..=max_size`, by size and
/// then lexicographically.
pub fn enumerate_subsets(d: usize, min_size: usize, max_size: usize) -> Result<Vec<Vec<usize>>> {
    if min_size < 2 || min_size > max_size || max_size > d {
        return Err(Error::InvalidArgument(format!(
            "subset sizes {min_size}..={max_size} invalid for {d} variables"
        )));
    }
    let mut out = Vec::new();
    for k in min_size..=max_size {
        let mut idx: Vec<usize> = (0..k).collect();
        loop {
            out.push(idx.clone());
            let Some(i) = (0..k).rev().find(|&i| idx[i] != i + d - k) else {
                break;
            };
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }
    Ok(out)
}

/// Column-wise z-scores using the population standard deviation.
pub fn standardize(x: &DMatrix<f64>, names: &[String]) -> Result<DMatrix<f64>> {
    let n = x.nrows() as f64;
    let mut out = x.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        let mean = col.sum() / n;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        if !(sd > 0.0) {
            return Err(Error::ZeroVariance(
                names.get(j).cloned().unwrap_or_else(|| j.to_string()),
            ));
        }
        col.apply(|v| *v = (*v - mean) / sd);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonConfig {
    pub fit: FitConfig,
    pub tie_loglik: f64,
    pub tie_bic: f64,
    pub standardize: bool,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        Self {
            fit: FitConfig::default(),
            tie_loglik: 1e-3,
            tie_bic: 1e-3,
            standardize: true,
        }
    }
}

/// Per-criterion verdict for one subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Winner(ModelKind),
    Tie,
    Unresolved,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Winner(k) => write!(f, "{k}"),
            Outcome::Tie => f.write_str("tie"),
            Outcome::Unresolved => f.write_str("unresolved"),
        }
    }
}

impl FromStr for Outcome {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tie" => Ok(Outcome::Tie),
            "unresolved" => Ok(Outcome::Unresolved),
            k => Ok(Outcome::Winner(k.parse()?)),
        }
    }
}

impl Serialize for Outcome {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Outcome {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindSummary {
    pub kind: ModelKind,
    pub loglik: f64,
    pub bic: f64,
    pub error_rate: f64,
    pub iterations: usize,
    pub converged: bool,
    #[serde(with = "dof_list")]
    pub nu: Vec<f64>,
}

mod dof_list {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Dof(#[serde(with = "crate::distributions::dof_serde")] f64);

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|&x| Dof(x)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Ok(Vec::<Dof>::deserialize(d)?
            .into_iter()
            .map(|x| x.0)
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetRun {
    pub subset: Vec<usize>,
    pub columns: Vec<String>,
    /// One entry per kind, in the requested order; `None` if every start failed.
    pub fits: Vec<Option<KindSummary>>,
    pub winner_loglik: Outcome,
    pub winner_bic: Outcome,
    pub winner_error: Outcome,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Tally {
    pub wins: BTreeMap<String, usize>,
    pub ties: usize,
    pub unresolved: usize,
}

impl Tally {
    pub fn wins_for(&self, kind: ModelKind) -> usize {
        self.wins.get(&kind.to_string()).copied().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.wins.values().sum::<usize>() + self.ties + self.unresolved
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Tallies {
    pub loglik: Tally,
    pub bic: Tally,
    pub error: Tally,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub dataset: String,
    pub n: usize,
    pub columns: Vec<String>,
    pub g: usize,
    pub kinds: Vec<ModelKind>,
    pub config: ComparisonConfig,
    pub version: String,
    pub correlation: CorrelationAudit,
    pub runs: Vec<SubsetRun>,
    pub tallies: Tallies,
}

/// Best kind by `score` (higher is better), or a tie when the runner-up is
/// within `tol`. Any failed fit leaves the subset unresolved.
fn decide(kinds: &[ModelKind], scores: &[Option<f64>], tol: f64) -> Outcome {
    let Some(vals) = scores.iter().copied().collect::<Option<Vec<f64>>>() else {
        return Outcome::Unresolved;
    };
    let mut best = 0;
    for (i, v) in vals.iter().enumerate() {
        if *v > vals[best] {
            best = i;
        }
    }
    let contested = vals
        .iter()
        .enumerate()
        .any(|(i, v)| i != best && vals[best] - v <= tol);
    if contested {
        Outcome::Tie
    } else {
        Outcome::Winner(kinds[best])
    }
}

/// Fits every kind on one subset. All kinds start from the same seeded
/// partition, so they share weights, locations, scales and `ν`.
pub fn run_subset(
    dataset: &Dataset,
    subset: &[usize],
    g: usize,
    kinds: &[ModelKind],
    config: &ComparisonConfig,
) -> Result<SubsetRun> {
    if subset.len() < 2
        || subset.windows(2).any(|w| w[0] >= w[1])
        || subset.iter().any(|&j| j >= dataset.d())
    {
        return Err(Error::InvalidArgument(format!("invalid subset {subset:?}")));
    }
    let columns: Vec<String> = subset.iter().map(|&j| dataset.columns[j].clone()).collect();
    let raw = dataset.select(subset);
    let x = if config.standardize {
        standardize(&raw, &columns)?
    } else {
        raw
    };
    let mut fits = Vec::with_capacity(kinds.len());
    for &kind in kinds {
        match fit(&x, g, kind, &config.fit) {
            Ok(r) => fits.push(Some(KindSummary {
                kind,
                loglik: r.loglik,
                bic: r.bic,
                error_rate: misclassification(&r.labels(), &dataset.labels)?,
                iterations: r.iterations,
                converged: r.converged,
                nu: r.model.components.iter().map(|c| c.nu).collect(),
            })),
            Err(e) if e.is_numerical() => fits.push(None),
            Err(e) => return Err(e),
        }
    }
    let pick =
        |f: fn(&KindSummary) -> f64| fits.iter().map(|s| s.as_ref().map(f)).collect::<Vec<_>>();
    Ok(SubsetRun {
        subset: subset.to_vec(),
        columns,
        winner_loglik: decide(kinds, &pick(|s| s.loglik), config.tie_loglik),
        winner_bic: decide(kinds, &pick(|s| -s.bic), config.tie_bic),
        winner_error: decide(kinds, &pick(|s| -s.error_rate), 0.0),
        fits,
    })
}

fn tally(kinds: &[ModelKind], runs: &[SubsetRun], pick: fn(&SubsetRun) -> Outcome) -> Tally {
    let mut t = Tally {
        wins: kinds.iter().map(|k| (k.to_string(), 0)).collect(),
        ..Tally::default()
    };
    for r in runs {
        match pick(r) {
            Outcome::Winner(k) => *t.wins.entry(k.to_string()).or_default() += 1,
            Outcome::Tie => t.ties += 1,
            Outcome::Unresolved => t.unresolved += 1,
        }
    }
    t
}

/// Sorts `runs` by subset and computes tallies.
pub fn assemble_report(
    dataset: &Dataset,
    g: usize,
    kinds: &[ModelKind],
    config: &ComparisonConfig,
    mut runs: Vec<SubsetRun>,
) -> Result<ComparisonReport> {
    runs.sort_by(|a, b| (a.subset.len(), &a.subset).cmp(&(b.subset.len(), &b.subset)));
    Ok(ComparisonReport {
        dataset: dataset.name.clone(),
        n: dataset.n(),
        columns: dataset.columns.clone(),
        g,
        kinds: kinds.to_vec(),
        config: config.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        correlation: correlation_audit(dataset)?,
        tallies: Tallies {
            loglik: tally(kinds, &runs, |r| r.winner_loglik),
            bic: tally(kinds, &runs, |r| r.winner_bic),
            error: tally(kinds, &runs, |r| r.winner_error),
        },
        runs,
    })
}

/// Runs every subset (in parallel when `exec` allows) and assembles the report.
pub fn run_comparison(
    dataset: &Dataset,
    subsets: &[Vec<usize>],
    g: usize,
    kinds: &[ModelKind],
    config: &ComparisonConfig,
    exec: Execution,
) -> Result<ComparisonReport> {
    if kinds.is_empty() {
        return Err(Error::InvalidArgument("no model kinds given".into()));
    }
    let runs = exec
        .map_slice(subsets, |s| run_subset(dataset, s, g, kinds, config))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    assemble_report(dataset, g, kinds, config, runs)
}

/// Lower-case hex SHA-256 of a file.
pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

/// Checks `<hash>  <file>` lines of a manifest against files in `dir`.
/// Returns the names that are missing or do not match.
pub fn verify_checksums(dir: impl AsRef<Path>, manifest: &str) -> Result<Vec<String>> {
    let dir = dir.as_ref();
    let mut bad = Vec::new();
    for line in manifest
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
    {
        let mut parts = line.split_whitespace();
        let (Some(hash), Some(name)) = (parts.next(), parts.next()) else {
            return Err(Error::InvalidArgument(format!(
                "bad manifest line `{line}`"
            )));
        };
        let name = name.trim_start_matches('*');
        match sha256_file(dir.join(name)) {
            Ok(h) if h == hash => {}
            _ => bad.push(name.to_string()),
        }
    }
    Ok(bad)
}
