use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_skewfit");

fn workdir(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("skewfit-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn skewfit(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Two skewed groups in three columns plus a label.
fn write_clusters(path: &Path) {
    let mut text = String::from("x,y,z,group\n");
    let mut state = 12345u64;
    let mut unif = || {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((state >> 11) as f64 + 0.5) / (1u64 << 53) as f64
    };
    for i in 0..160 {
        let g = i % 2;
        let e: f64 = -unif().ln();
        let a = unif() - 0.5;
        let b = unif() - 0.5;
        let shift = 4.0 * g as f64;
        text += &format!(
            "{},{},{},{}\n",
            shift + e + a,
            shift + 0.5 * e + b,
            a + b + 0.3 * e,
            ["p", "q"][g]
        );
    }
    std::fs::write(path, text).unwrap();
}

fn fit_json(args: &[&str]) -> (i32, Value, String) {
    let o = skewfit(args);
    let v = serde_json::from_slice(&o.stdout).unwrap_or(Value::Null);
    (code(&o), v, String::from_utf8_lossy(&o.stdout).into_owned())
}

#[test]
fn fit_kind_aliases_agree() {
    let d = workdir("alias");
    let data = d.join("c.csv");
    write_clusters(&data);
    let base = [
        s(&data),
        "--g",
        "2",
        "--label-col",
        "group",
        "--max-iter",
        "40",
        "--seed",
        "3",
    ];
    let (_, a, _) = fit_json(&[&["fit", "--kind", "restricted"], &base[..]].concat());
    let (_, b, _) = fit_json(&[&["fit", "--kind", "cfust:1"], &base[..]].concat());
    let la = a["loglik"].as_f64().unwrap();
    let lb = b["loglik"].as_f64().unwrap();
    assert!((la - lb).abs() < 1e-8, "{la} vs {lb}");
    assert!(a["error_rate"].as_f64().unwrap() < 0.1);
}

#[test]
fn fit_gaussian_reduction_and_determinism() {
    let d = workdir("gauss");
    let data = d.join("c.csv");
    write_clusters(&data);
    let args = [
        "fit",
        s(&data),
        "--g",
        "1",
        "--kind",
        "symmetric",
        "--nu-fixed",
        "inf",
        "--features",
        "x,y",
    ];
    let (c, v, text) = fit_json(&args);
    assert_eq!(c, 0);
    // Closed-form Gaussian maximum likelihood.
    let rows: Vec<[f64; 2]> = std::fs::read_to_string(&data)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<f64> = l.split(',').take(2).map(|x| x.parse().unwrap()).collect();
            [f[0], f[1]]
        })
        .collect();
    let n = rows.len() as f64;
    let m = [
        rows.iter().map(|r| r[0]).sum::<f64>() / n,
        rows.iter().map(|r| r[1]).sum::<f64>() / n,
    ];
    let cov = |i: usize, j: usize| {
        rows.iter()
            .map(|r| (r[i] - m[i]) * (r[j] - m[j]))
            .sum::<f64>()
            / n
    };
    let det = cov(0, 0) * cov(1, 1) - cov(0, 1).powi(2);
    let ll = -0.5 * n * (2.0 * (2.0 * std::f64::consts::PI).ln() + det.ln() + 2.0);
    assert!((v["loglik"].as_f64().unwrap() - ll).abs() < 1e-6);
    assert_eq!(v["model"]["components"][0]["nu"], "inf");
    let (_, _, again) = fit_json(&args);
    assert_eq!(text, again);
}

#[test]
fn fit_exit_codes() {
    let d = workdir("exit");
    let data = d.join("c.csv");
    write_clusters(&data);
    let o = skewfit(&[
        "fit",
        s(&data),
        "--g",
        "2",
        "--max-iter",
        "2",
        "--out",
        s(&d.join("r.json")),
    ]);
    assert_eq!(code(&o), 2);
    assert!(d.join("r.json").exists());
    let o = skewfit(&["fit", s(&d.join("missing.csv"))]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).starts_with("skewfit: error[input]:"));
    let o = skewfit(&["fit", s(&data), "--kind", "bogus"]);
    assert_eq!(code(&o), 1);
    let o = skewfit(&["fit", s(&data), "--no-such-flag"]);
    assert_eq!(code(&o), 1);
    // Identical rows leave no positive-definite scale.
    let flat = d.join("flat.csv");
    std::fs::write(&flat, "a,b\n1,2\n1,2\n1,2\n1,2\n").unwrap();
    let o = skewfit(&["fit", s(&flat)]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("error[numerical]"));
    let o = skewfit(&["--help"]);
    assert_eq!(code(&o), 0);
}

fn write_params(dir: &Path, name: &str, json: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, json).unwrap();
    p
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn sample_command() {
    let d = workdir("sample");
    let p = write_params(
        &d,
        "u.json",
        r#"{"mu":[0,1],"sigma":[[1,0.2],[0.2,1]],"delta":[[1,0],[0,-2]],"nu":6,"kind":"unrestricted"}"#,
    );
    let a = skewfit(&["sample", s(&p), "--n", "25", "--seed", "4"]);
    let b = skewfit(&["sample", s(&p), "--n", "25", "--seed", "4"]);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    let rows = csv_rows(&String::from_utf8_lossy(&a.stdout));
    assert_eq!(rows.len(), 25);
    assert!(rows.iter().all(|r| r.len() == 2));
    assert_eq!(code(&skewfit(&["sample", s(&p), "--n", "0"])), 1);
    let c = skewfit(&["sample", s(&p), "--n", "25", "--seed", "5"]);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn density_command() {
    let d = workdir("density");
    let p = write_params(
        &d,
        "t.json",
        r#"{"mu":[1,-1],"sigma":[[2,0.5],[0.5,1]],"delta":[[0],[0]],"nu":4,"kind":"symmetric_t"}"#,
    );
    let pts = d.join("pts.csv");
    std::fs::write(&pts, "a,b\n0,-1\n1,-1\n2,-1\n1,0\n1,-2\n0.5,-0.5\n").unwrap();
    let o = skewfit(&["density", s(&p), s(&pts)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = csv_rows(&String::from_utf8_lossy(&o.stdout));
    let pdf: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    let log: Vec<f64> = rows.iter().map(|r| r[3].parse().unwrap()).collect();
    assert!(pdf.iter().all(|&v| v >= 0.0));
    let top = (0..pdf.len())
        .max_by(|&i, &j| pdf[i].total_cmp(&pdf[j]))
        .unwrap();
    assert_eq!(top, 1);
    for (p, l) in pdf.iter().zip(&log) {
        assert!((l.exp() - p).abs() <= 1e-12 * p);
    }
    let bad = d.join("bad.csv");
    std::fs::write(&bad, "a\n1\n").unwrap();
    assert_eq!(code(&skewfit(&["density", s(&p), s(&bad)])), 1);
}

fn rank_of(params: &Path) -> usize {
    let o = skewfit(&["skewgeom", s(params), "--n", "400"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    let line = text.lines().find(|l| l.starts_with("# rank=")).unwrap();
    line["# rank=".len()..].parse().unwrap()
}

#[test]
fn skewgeom_command() {
    let d = workdir("geom");
    let r = write_params(
        &d,
        "r.json",
        r#"{"mu":[0,0,0],"sigma":[[1,0,0],[0,1,0],[0,0,1]],"delta":[[1],[-2],[0.5]],"nu":5,"kind":"restricted"}"#,
    );
    let u = write_params(
        &d,
        "u.json",
        r#"{"mu":[0,0],"sigma":[[1,0],[0,1]],"delta":[[1,0],[0,3]],"nu":5,"kind":"unrestricted"}"#,
    );
    let z = write_params(
        &d,
        "z.json",
        r#"{"mu":[0,0],"sigma":[[1,0],[0,1]],"delta":[[0],[0]],"nu":5,"kind":"symmetric_t"}"#,
    );
    assert_eq!(rank_of(&r), 1);
    assert_eq!(rank_of(&u), 2);
    assert_eq!(rank_of(&z), 0);
}

#[test]
fn config_file_precedence() {
    let d = workdir("config");
    let p = write_params(
        &d,
        "u.json",
        r#"{"mu":[0],"sigma":[[1]],"delta":[[1]],"nu":6,"kind":"restricted"}"#,
    );
    let cfg = d.join("run.cfg");
    std::fs::write(&cfg, "# draws\nn = 7\nseed=9\n").unwrap();
    let o = skewfit(&["--config", s(&cfg), "sample", s(&p)]);
    assert_eq!(csv_rows(&String::from_utf8_lossy(&o.stdout)).len(), 7);
    let o2 = skewfit(&["sample", s(&p), "--config", s(&cfg), "--n", "3"]);
    assert_eq!(csv_rows(&String::from_utf8_lossy(&o2.stdout)).len(), 3);
    let same = skewfit(&["sample", s(&p), "--n", "7", "--seed", "9"]);
    assert_eq!(
        csv_rows(&String::from_utf8_lossy(&o.stdout)),
        csv_rows(&String::from_utf8_lossy(&same.stdout))
    );
    std::fs::write(&cfg, "bogus=1\n").unwrap();
    assert_eq!(code(&skewfit(&["--config", s(&cfg), "sample", s(&p)])), 1);
    std::fs::write(&cfg, "not a pair\n").unwrap();
    assert_eq!(code(&skewfit(&["--config", s(&cfg), "sample", s(&p)])), 1);
}

#[test]
fn data_directory_lookup() {
    let d = workdir("datadir");
    write_clusters(&d.join("clusters.csv"));
    let o = Command::new(BIN)
        .args([
            "fit",
            "clusters.csv",
            "--max-iter",
            "3",
            "--features",
            "x,y",
        ])
        .env("SKEWFIT_DATA_DIR", &d)
        .current_dir(std::env::temp_dir())
        .output()
        .unwrap();
    assert!(matches!(code(&o), 0 | 2), "{}", stderr(&o));
}

fn bench_args<'a>(data: &'a str, out: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![
        "benchmark",
        data,
        "--label-col",
        "group",
        "--out",
        out,
        "--max-iter",
        "25",
    ];
    v.extend_from_slice(extra);
    v
}

#[test]
fn benchmark_is_independent_of_job_count_and_format() {
    let d = workdir("jobs");
    let data = d.join("c.csv");
    write_clusters(&data);
    let (a, b) = (d.join("a.json"), d.join("b.json"));
    assert_eq!(
        code(&skewfit(&bench_args(s(&data), s(&a), &["--jobs", "1"]))),
        0
    );
    assert_eq!(
        code(&skewfit(&bench_args(s(&data), s(&b), &["--jobs", "4"]))),
        0
    );
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let r: Value = serde_json::from_slice(&std::fs::read(&a).unwrap()).unwrap();
    assert_eq!(r["runs"].as_array().unwrap().len(), 4);
    assert!(!d.join("a.json.progress.jsonl").exists());
    let c = d.join("c.csv.out");
    assert_eq!(
        code(&skewfit(&bench_args(
            s(&data),
            s(&c),
            &["--format", "csv", "--max-size", "2"]
        ))),
        0
    );
    let text = std::fs::read_to_string(&c).unwrap();
    assert_eq!(csv_rows(&text).len(), 3);
    assert!(text
        .lines()
        .any(|l| l.starts_with("subset,restricted_loglik")));
}

#[test]
fn benchmark_resumes_after_interruption() {
    let d = workdir("resume");
    let data = d.join("c.csv");
    write_clusters(&data);
    let (full, part) = (d.join("full.json"), d.join("part.json"));
    let extra = [
        "--max-iter",
        "150",
        "--jobs",
        "1",
        "--kinds",
        "restricted,symmetric",
    ];
    assert_eq!(code(&skewfit(&bench_args(s(&data), s(&full), &extra))), 0);

    let progress = d.join("part.json.progress.jsonl");
    let mut child = Command::new(BIN)
        .args(bench_args(s(&data), s(&part), &extra))
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let start = Instant::now();
    let mut interrupted = false;
    while start.elapsed() < Duration::from_secs(120) {
        let lines = std::fs::read_to_string(&progress)
            .map(|t| t.lines().count())
            .unwrap_or(0);
        if lines >= 3 {
            interrupted = child.try_wait().unwrap().is_none();
            child.kill().ok();
            break;
        }
        if child.try_wait().unwrap().is_some() {
            break;
        }
        std::thread::sleep(Duration::from_millis(5));
    }
    child.wait().unwrap();
    eprintln!("interrupted={interrupted}");
    if interrupted {
        assert!(!part.exists());
        // Simulate a torn final record.
        let mut text = std::fs::read_to_string(&progress).unwrap();
        text.push_str("{\"subset\":[0,");
        std::fs::write(&progress, text).unwrap();
    }
    let mut resume = extra.to_vec();
    resume.push("--resume");
    let o = skewfit(&bench_args(s(&data), s(&part), &resume));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(std::fs::read(&full).unwrap(), std::fs::read(&part).unwrap());

    // A progress file from other settings is refused.
    std::fs::write(&progress, "{\"dataset\":\"other\"}\n").unwrap();
    assert_eq!(code(&skewfit(&bench_args(s(&data), s(&part), &resume))), 1);
}
