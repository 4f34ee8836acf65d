//! Acceptance run: one PASS/FAIL line per criterion, driven through the CLI.
//!
//! Each criterion names the CLI checks it rests on and a runtime limit. A
//! criterion listed in `KNOWN_FAILURES` still prints FAIL when it fails, with
//! the reason; only unexpected failures make this target exit non-zero.
//!
//! `SHELAB_ACCEPT_DX` overrides the lattice spacing of the small-ball run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use serde_json::Value;

/// Criteria expected to fail, with the reason.
const KNOWN_FAILURES: &[(u32, &str)] = &[(
    9,
    "the fitted exponent of the lattice sup sits below the bracket at affordable lattice \
     spacings (about 2.8 at dx = 1/32, 3.2 at dx = 1/64, 3.5 at dx = 1/128) and grows as dx \
     shrinks; the T-linearity and monotonicity parts must still pass",
)];

struct Run {
    dir: PathBuf,
    elapsed: Duration,
    code: Option<i32>,
    checks: BTreeMap<String, (bool, String)>,
    stderr: String,
}

fn root() -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn shelab(dir: &Path, args: &[&str]) -> Run {
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_shelab"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .output()
        .expect("binary runs");
    let elapsed = start.elapsed();
    let mut checks = BTreeMap::new();
    if let Ok(text) = std::fs::read_to_string(dir.join("summary.json")) {
        let v: Value = serde_json::from_str(&text).expect("summary is JSON");
        assert_eq!(v["schema"], 1);
        for c in v["checks"].as_array().into_iter().flatten() {
            checks.insert(
                c["name"].as_str().unwrap_or_default().to_string(),
                (c["pass"] == true, c["detail"].as_str().unwrap_or_default().to_string()),
            );
        }
    }
    Run {
        dir: dir.to_path_buf(),
        elapsed,
        code: out.status.code(),
        checks,
        stderr: String::from_utf8_lossy(&out.stderr).trim().to_string(),
    }
}

struct Verdict {
    pass: bool,
    lines: Vec<String>,
}

/// Pass when the run succeeded, every named check (or prefix ending in `*`)
/// passed, and the runtime is within `limit`.
fn judge(run: &Run, names: &[&str], limit: Duration) -> Verdict {
    let mut pass = run.code == Some(0);
    let mut lines = Vec::new();
    if run.code != Some(0) {
        lines.push(format!("exit code {:?}: {}", run.code, run.stderr));
    }
    for name in names {
        let matched: Vec<(&String, &(bool, String))> = match name.strip_suffix('*') {
            Some(prefix) => run.checks.iter().filter(|(k, _)| k.starts_with(prefix)).collect(),
            None => run.checks.get_key_value(*name).into_iter().collect(),
        };
        if matched.is_empty() {
            pass = false;
            lines.push(format!("missing check {name}"));
        }
        for (k, (ok, detail)) in matched {
            pass &= *ok;
            lines.push(format!("{} {k}: {detail}", if *ok { "ok  " } else { "FAIL" }));
        }
    }
    let within = run.elapsed <= limit;
    pass &= within;
    lines.push(format!(
        "runtime {:.1} s (limit {} s){}",
        run.elapsed.as_secs_f64(),
        limit.as_secs(),
        if within { "" } else { " exceeded" }
    ));
    Verdict { pass, lines }
}

/// Files of two output directories are byte-identical; manifests may differ
/// only in their `out=` line.
fn same_outputs(a: &Path, b: &Path) -> Result<usize, String> {
    let mut names: Vec<_> = std::fs::read_dir(a)
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    for name in &names {
        let x = std::fs::read(a.join(name)).map_err(|e| e.to_string())?;
        let y = std::fs::read(b.join(name)).map_err(|e| format!("{}: {e}", name.to_string_lossy()))?;
        let (x, y) = if name == "manifest.txt" {
            let strip = |v: Vec<u8>| {
                String::from_utf8_lossy(&v)
                    .lines()
                    .filter(|l| !l.starts_with("out="))
                    .collect::<Vec<_>>()
                    .join("\n")
                    .into_bytes()
            };
            (strip(x), strip(y))
        } else {
            (x, y)
        };
        if x != y {
            return Err(format!("{} differs", name.to_string_lossy()));
        }
    }
    Ok(names.len())
}

fn main() {
    let root = root();
    let dir = |name: &str| root.join(name);
    let mins = |m: u64| Duration::from_secs(60 * m);
    let mut verdicts: Vec<(u32, &str, Verdict)> = Vec::new();

    let kernel = shelab(&dir("kernel-check"), &["kernel-check", "--gamma", "0.25,0.5,0.75", "--modes", "4096"]);
    verdicts.push((
        1,
        "heat kernel dual series, mass and semigroup",
        judge(&kernel, &["dual-series agreement", "unit mass", "semigroup"], Duration::from_secs(10)),
    ));
    verdicts.push((
        2,
        "Riesz coefficients non-negative with slope gamma - 1",
        judge(&kernel, &["coefficients non-negative*", "coefficient slope*"], Duration::from_secs(30)),
    ));

    let variance = shelab(&dir("variance"), &["variance", "--gamma", "0.5", "--trials", "10000", "--t", "0.001"]);
    verdicts.push((
        3,
        "lattice solver variance against the series",
        judge(&variance, &["lattice variance vs series", "lattice variance vs scheme"], mins(2)),
    ));
    verdicts.push((
        4,
        "variance and covariance scaling with Monte Carlo agreement",
        judge(&variance, &["variance slope", "covariance slope", "spectral Monte Carlo"], mins(2)),
    ));

    let eta = shelab(&dir("eta"), &["eta", "--gamma", "0.5", "--eps", "0.2", "--pairs", "10", "--max_dim", "8"]);
    verdicts.push((
        5,
        "regression coefficients bounded when admissible, monotone in C0",
        judge(&eta, &["eta bound when admissible", "monotone in C0"], mins(1)),
    ));

    let regularity = shelab(
        &dir("regularity"),
        &["regularity", "--gamma", "0.5", "--trials", "10000", "--direction", "space,time"],
    );
    verdicts.push((
        6,
        "space and time mean-square increment slopes",
        judge(&regularity, &["space msq slope", "time msq slope"], mins(3)),
    ));

    let tails = shelab(&dir("tails"), &["tails", "--gamma", "0.5", "--trials", "10000", "--sep", "0.1"]);
    verdicts.push((
        7,
        "tail envelopes and beta scaling",
        judge(
            &tails,
            &["increment envelope", "patch-sup envelope", "sup dominates point", "beta scaling"],
            mins(5),
        ),
    ));

    let factorize = shelab(
        &dir("factorize"),
        &["factorize", "--alpha", "0.2", "--T", "0.05", "--dt", "1e-5", "--modes", "0,1,2,3,4"],
    );
    verdicts.push((
        8,
        "factorization identity per mode under refinement",
        judge(&factorize, &["relative error mode*", "refinement mode*"], mins(1)),
    ));

    let dx = std::env::var("SHELAB_ACCEPT_DX").unwrap_or_else(|_| "0.03125".into());
    let smallball = shelab(
        &dir("smallball"),
        &[
            "smallball", "--gamma", "0.5", "--eps", "0.35,0.3,0.25,0.2", "--T", "1", "--rate_eps", "0.35",
            "--rate_T", "0.5,1,2", "--fit_T", "1", "--trials", "20000", "--dx", &dx,
        ],
    );
    verdicts.push((
        9,
        "small-ball exponent bracket, rate linear in T, monotone",
        judge(
            &smallball,
            &["exponent bracket", "rate linear in T*", "monotone in T", "monotone in eps"],
            mins(30),
        ),
    ));

    verdicts.push((
        10,
        "Gaussian correlation inequality on random boxes",
        judge(&eta, &["correlation inequality"], mins(1)),
    ));

    // Determinism: the documented small-ball example twice, then every run
    // above except the small-ball sweep again from its own manifest.
    let mut lines = Vec::new();
    let mut pass = true;
    let example = ["smallball", "--gamma", "0.5", "--eps", "0.3", "--T", "1", "--trials", "20000", "--seed", "7"];
    let a = shelab(&dir("determinism/a"), &example);
    let b = shelab(&dir("determinism/b"), &example);
    pass &= a.code == Some(0) && b.code == Some(0);
    let mut compare = |label: &str, x: &Path, y: &Path| match same_outputs(x, y) {
        Ok(n) => lines.push(format!("ok   {label}: {n} files identical")),
        Err(e) => {
            pass = false;
            lines.push(format!("FAIL {label}: {e}"));
        }
    };
    compare("smallball example run twice", &a.dir, &b.dir);
    for run in [&kernel, &variance, &eta, &regularity, &tails, &factorize] {
        let name = run.dir.file_name().unwrap().to_string_lossy().to_string();
        let manifest = run.dir.join("manifest.txt");
        let again = shelab(
            &dir(&format!("determinism/{name}")),
            &[name.as_str(), "--config", manifest.to_str().unwrap()],
        );
        compare(&format!("{name} re-run from manifest"), &run.dir, &again.dir);
    }
    verdicts.push((11, "byte-for-byte determinism", Verdict { pass, lines }));

    println!();
    let mut unexpected = Vec::new();
    for (n, title, v) in &verdicts {
        println!("criterion {n:>2} {}: {title}", if v.pass { "PASS" } else { "FAIL" });
        for l in &v.lines {
            println!("    {l}");
        }
        if !v.pass {
            match KNOWN_FAILURES.iter().find(|(k, _)| k == n) {
                Some((_, why)) => println!("    known failure: {why}"),
                None => unexpected.push(*n),
            }
        }
    }
    // The known failure must not hide a failure of the parts that should pass.
    if let Some(v) = verdicts.iter().find(|(n, _, _)| *n == 9).map(|(_, _, v)| v) {
        if v.lines.iter().any(|l| l.starts_with("FAIL") && !l.contains("exponent bracket"))
            || v.lines.iter().any(|l| l.starts_with("exit code") || l.starts_with("missing") || l.ends_with("exceeded"))
        {
            unexpected.push(9);
        }
    }
    println!();
    if unexpected.is_empty() {
        println!("acceptance: no unexpected failures");
    } else {
        unexpected.dedup();
        println!("acceptance: unexpected failures in criteria {unexpected:?}");
        std::process::exit(1);
    }
}
