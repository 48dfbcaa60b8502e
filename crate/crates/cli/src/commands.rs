use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use skewfit::bench::{
    adjusted_rand_index, assemble_report, emit_report, enumerate_subsets, load_csv,
    misclassification, run_subset, standardize, ComparisonConfig, ReportFormat, SubsetRun,
};
use skewfit::distributions::{
    sample, skew_direction_rank, skew_term_sample, Cfust, DensityKernel, ModelKind,
};
use skewfit::emfit::{fit, FitConfig, FitResult};
use skewfit::exec::{derive_seed, Execution};
use skewfit::numerics::truncated::OrthantEngine;
use skewfit::numerics::QmcSpec;

use crate::{
    BenchmarkArgs, Command, DensityArgs, EmArgs, Exit, Failure, FitArgs, SampleArgs, SkewgeomArgs,
};

const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn dispatch(cmd: Command) -> Result<Exit, Failure> {
    match cmd {
        Command::Fit(a) => cmd_fit(&a),
        Command::Sample(a) => cmd_sample(&a),
        Command::Density(a) => cmd_density(&a),
        Command::Skewgeom(a) => cmd_skewgeom(&a),
        Command::Benchmark(a) => cmd_benchmark(&a),
    }
}

/// Paths that do not exist are looked up under `SKEWFIT_DATA_DIR`.
fn resolve(path: &Path) -> PathBuf {
    if path.exists() || path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os("SKEWFIT_DATA_DIR") {
        Some(dir) if Path::new(&dir).join(path).exists() => Path::new(&dir).join(path),
        _ => path.to_path_buf(),
    }
}

fn write_out(path: &Path, text: &str) -> Result<(), Failure> {
    if path == Path::new("-") {
        std::io::stdout().write_all(text.as_bytes())?;
    } else {
        std::fs::write(path, text)
            .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T, Failure> {
    #[cfg(feature = "parallel")]
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Failure::input(e.to_string()))?;
        Ok(pool.install(f))
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = jobs;
        Ok(f())
    }
}

fn parse_dof(s: &str) -> Result<f64, Failure> {
    let v = match s.trim().to_ascii_lowercase().as_str() {
        "inf" | "infinity" => f64::INFINITY,
        t => t
            .parse::<f64>()
            .map_err(|_| Failure::input(format!("invalid degrees of freedom `{s}`")))?,
    };
    if v.is_nan() || v <= 0.0 {
        return Err(Failure::input(format!("invalid degrees of freedom `{s}`")));
    }
    Ok(v)
}

fn fit_config(em: &EmArgs) -> Result<FitConfig, Failure> {
    let config = FitConfig {
        max_iter: em.max_iter,
        tol: em.tol,
        nu_fixed: em.nu_fixed.as_deref().map(parse_dof).transpose()?,
        n_starts: em.starts,
        seed: derive_seed(em.seed, "fit", 0),
        qmc: QmcSpec::new(em.qmc_points, derive_seed(em.seed, "qmc", 0), em.qmc_shifts)?,
        exact_max_dim: em.exact_max_dim,
        exec: Execution::Parallel,
    };
    config.validate()?;
    Ok(config)
}

fn parse_kind(s: &str) -> Result<ModelKind, Failure> {
    s.parse::<ModelKind>().map_err(Failure::from)
}

fn load_params(path: &Path) -> Result<Cfust, Failure> {
    let path = resolve(path);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn header_lines(command: &str, args: &impl Serialize) -> Result<String, Failure> {
    Ok(format!(
        "# skewfit {VERSION} {command}\n# args={}\n",
        serde_json::to_string(args)?
    ))
}

fn csv_body(header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<String, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Failure::input(e.to_string());
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(&r).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Failure::input(e.to_string()))?;
    Ok(String::from_utf8_lossy(&bytes).into_owned())
}

#[derive(Serialize)]
struct FitOutput<'a> {
    version: &'static str,
    args: &'a FitArgs,
    columns: &'a [String],
    #[serde(flatten)]
    result: &'a FitResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    error_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    adjusted_rand_index: Option<f64>,
}

fn cmd_fit(a: &FitArgs) -> Result<Exit, Failure> {
    let kind = parse_kind(&a.kind)?;
    let config = fit_config(&a.em)?;
    if a.g == 0 {
        return Err(Failure::input("--g must be at least 1"));
    }
    let ds = load_csv(
        resolve(&a.data),
        a.label_col.as_deref(),
        a.features.as_deref(),
    )?;
    let x = if a.standardize {
        standardize(&ds.data, &ds.columns)?
    } else {
        ds.data.clone()
    };
    let result = with_pool(a.em.jobs, || fit(&x, a.g, kind, &config))??;
    let labels = result.labels();
    let scored = a.label_col.is_some();
    let out = FitOutput {
        version: VERSION,
        args: a,
        columns: &ds.columns,
        result: &result,
        error_rate: if scored {
            misclassification(&labels, &ds.labels).ok()
        } else {
            None
        },
        adjusted_rand_index: if scored {
            adjusted_rand_index(&labels, &ds.labels).ok()
        } else {
            None
        },
    };
    write_out(&a.out, &(serde_json::to_string_pretty(&out)? + "\n"))?;
    Ok(if result.converged {
        Exit::Ok
    } else {
        Exit::NotConverged
    })
}

fn cmd_sample(a: &SampleArgs) -> Result<Exit, Failure> {
    if a.n == 0 {
        return Err(Failure::input("usage: --n must be at least 1"));
    }
    let c = load_params(&a.params)?;
    let x = sample(&c.params, a.n, derive_seed(a.seed, "sample", 0));
    let header: Vec<String> = (1..=x.ncols()).map(|j| format!("y{j}")).collect();
    let body = csv_body(
        &header,
        x.row_iter()
            .map(|r| r.iter().map(|v| v.to_string()).collect()),
    )?;
    write_out(&a.out, &(header_lines("sample", a)? + &body))?;
    Ok(Exit::Ok)
}

fn cmd_density(a: &DensityArgs) -> Result<Exit, Failure> {
    let c = load_params(&a.params)?;
    let path = resolve(&a.points);
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(&path)
        .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Failure::input(e.to_string()))?
        .iter()
        .map(String::from)
        .collect();
    if header.len() != c.params.p() {
        return Err(Failure::input(format!(
            "points have {} columns, parameters need {}",
            header.len(),
            c.params.p()
        )));
    }
    let mut points = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Failure::input(e.to_string()))?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|_| Failure::input(format!("cannot parse point on row {}", i + 1)))?;
        points.push(row);
    }
    let kernel = DensityKernel::new(&c.params)?;
    let engine = OrthantEngine {
        exec: Execution::Sequential,
        ..OrthantEngine::new(QmcSpec::new(
            a.qmc_points,
            derive_seed(a.seed, "qmc", 0),
            a.qmc_shifts,
        )?)
    };
    let logs = Execution::Parallel
        .map_slice(&points, |y| kernel.logpdf(y, &engine))
        .into_iter()
        .collect::<Result<Vec<f64>, _>>()?;
    let mut out_header = header;
    out_header.extend(["pdf".to_string(), "logpdf".to_string()]);
    let rows = points.iter().zip(&logs).map(|(y, l)| {
        let mut r: Vec<String> = y.iter().map(|v| v.to_string()).collect();
        r.push(l.exp().to_string());
        r.push(l.to_string());
        r
    });
    let body = csv_body(&out_header, rows)?;
    write_out(&a.out, &(header_lines("density", a)? + &body))?;
    Ok(Exit::Ok)
}

fn cmd_skewgeom(a: &SkewgeomArgs) -> Result<Exit, Failure> {
    if a.n == 0 {
        return Err(Failure::input("usage: --n must be at least 1"));
    }
    let c = load_params(&a.params)?;
    let s = skew_term_sample(&c.params, a.n, derive_seed(a.seed, "skew", 0));
    let rank = skew_direction_rank(&s, a.rank_tol);
    let header: Vec<String> = (1..=s.draws.ncols()).map(|j| format!("s{j}")).collect();
    let body = csv_body(
        &header,
        s.draws
            .row_iter()
            .map(|r| r.iter().map(|v| v.to_string()).collect()),
    )?;
    let text = header_lines("skewgeom", a)? + &format!("# rank={rank}\n") + &body;
    write_out(&a.out, &text)?;
    if a.out != Path::new("-") {
        println!("rank={rank}");
    }
    Ok(Exit::Ok)
}

/// First line of the progress file; a resumed run must match it exactly.
#[derive(Debug, PartialEq, Serialize, Deserialize)]
struct ProgressHeader {
    dataset: String,
    n: usize,
    columns: Vec<String>,
    g: usize,
    kinds: Vec<ModelKind>,
    config: ComparisonConfig,
    subsets: Vec<Vec<usize>>,
}

pub fn progress_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".progress.jsonl");
    PathBuf::from(s)
}

/// Runs recorded by an earlier attempt. A torn final line is dropped.
fn read_progress(path: &Path, header: &ProgressHeader) -> Result<Vec<SubsetRun>, Failure> {
    let file = File::open(path)?;
    let lines: Vec<String> = BufReader::new(file).lines().collect::<Result<_, _>>()?;
    let Some(first) = lines.first() else {
        return Ok(Vec::new());
    };
    let found: ProgressHeader = serde_json::from_str(first).map_err(|e| {
        Failure::input(format!(
            "{}: unreadable progress header: {e}",
            path.display()
        ))
    })?;
    if &found != header {
        return Err(Failure::input(format!(
            "{} was written with different settings; remove it or drop --resume",
            path.display()
        )));
    }
    let mut runs = Vec::new();
    for (i, line) in lines.iter().enumerate().skip(1) {
        match serde_json::from_str::<SubsetRun>(line) {
            Ok(r) => runs.push(r),
            Err(_) if i + 1 == lines.len() => {}
            Err(e) => {
                return Err(Failure::input(format!(
                    "{} line {}: {e}",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    Ok(runs)
}

fn cmd_benchmark(a: &BenchmarkArgs) -> Result<Exit, Failure> {
    let format: ReportFormat = a.format.parse()?;
    let kinds = a
        .kinds
        .iter()
        .map(|k| parse_kind(k))
        .collect::<Result<Vec<_>, _>>()?;
    if kinds.is_empty() {
        return Err(Failure::input("--kinds is empty"));
    }
    let ds = load_csv(resolve(&a.data), Some(&a.label_col), a.features.as_deref())?;
    let subsets = enumerate_subsets(ds.d(), a.min_size, a.max_size.unwrap_or(ds.d()))?;
    let config = ComparisonConfig {
        fit: fit_config(&a.em)?,
        tie_loglik: a.tie_loglik,
        tie_bic: a.tie_bic,
        standardize: !a.raw_scale,
    };
    let header = ProgressHeader {
        dataset: ds.name.clone(),
        n: ds.n(),
        columns: ds.columns.clone(),
        g: a.g,
        kinds: kinds.clone(),
        config: config.clone(),
        subsets: subsets.clone(),
    };
    let progress = progress_path(&a.out);
    let done = if a.resume && progress.exists() {
        read_progress(&progress, &header)?
    } else {
        Vec::new()
    };
    // Rewrite the file so that a torn line never precedes new records.
    let mut file = File::create(&progress)?;
    writeln!(file, "{}", serde_json::to_string(&header)?)?;
    for r in &done {
        writeln!(file, "{}", serde_json::to_string(r)?)?;
    }
    drop(file);
    let file = Mutex::new(OpenOptions::new().append(true).open(&progress)?);

    let todo: Vec<&Vec<usize>> = subsets
        .iter()
        .filter(|s| !done.iter().any(|r| &r.subset == *s))
        .collect();
    let total = subsets.len();
    let counter = AtomicUsize::new(done.len());
    let fresh = with_pool(a.em.jobs, || {
        Execution::Parallel.map_slice(&todo, |s| -> Result<SubsetRun, Failure> {
            let run = run_subset(&ds, s, a.g, &kinds, &config)?;
            let line = serde_json::to_string(&run)? + "\n";
            let mut f = file.lock().unwrap_or_else(|p| p.into_inner());
            f.write_all(line.as_bytes())?;
            f.flush()?;
            drop(f);
            let k = counter.fetch_add(1, Ordering::SeqCst) + 1;
            eprintln!(
                "[{k}/{total}] {} loglik winner: {}",
                run.columns.join("+"),
                run.winner_loglik
            );
            Ok(run)
        })
    })?;
    let mut runs = done;
    for r in fresh {
        runs.push(r?);
    }
    let report = assemble_report(&ds, a.g, &kinds, &config, runs)?;
    emit_report(&report, format, &a.out)?;
    std::fs::remove_file(&progress)?;
    let t = &report.tallies.loglik;
    let wins: Vec<String> = t.wins.iter().map(|(k, v)| format!("{k}={v}")).collect();
    eprintln!(
        "loglik tallies: {} ties={} unresolved={}",
        wins.join(" "),
        t.ties,
        t.unresolved
    );
    Ok(Exit::Ok)
}
