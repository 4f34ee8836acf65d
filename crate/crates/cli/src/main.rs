//! `shelab`: experiments for the stochastic heat equation with Riesz-kernel noise.
//!
//! Every run writes `manifest.txt` (re-runnable with `--config`),
//! `summary.json` and CSV tables into its output directory. Exit codes: 0 ok,
//! 2 configuration error, 3 numeric failure, 4 failed check under `--check`.

mod commands;
mod error;
mod output;
mod params;
mod svg;

use std::path::Path;
use std::process::ExitCode;

use clap::{ArgMatches, Command};

use commands::{Spec, COMMANDS};
use error::{CliError, CHECK_FAILED};
use output::{Check, Output};
use params::{add_args, param, ParamDef, Params};

const ALL_PARAMS: &[ParamDef] = &[param(
    "skip",
    "",
    "subcommands to leave out, comma-separated",
)];

fn cli() -> Command {
    let mut cmd = Command::new("shelab")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Stochastic heat equation with Riesz-kernel noise on the torus")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for spec in COMMANDS {
        cmd = cmd.subcommand(add_args(Command::new(spec.name).about(spec.about), spec.params));
    }
    cmd.subcommand(add_args(
        Command::new("all").about("Every subcommand with its defaults, one directory each"),
        ALL_PARAMS,
    ))
}

/// Worker count: `--threads`, else `SHELAB_THREADS`, else rayon's default.
fn init_threads(p: &Params) -> Result<(), CliError> {
    let mut n: usize = p.get("threads")?;
    if n == 0 {
        if let Ok(v) = std::env::var("SHELAB_THREADS") {
            n = v
                .trim()
                .parse()
                .map_err(|_| CliError::config(format!("SHELAB_THREADS must be a count, got {v:?}")))?;
        }
    }
    if n > 0 {
        // Fails only if a pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn execute(spec: &Spec, p: &Params) -> Result<Vec<Check>, CliError> {
    let out = Output::create(p)?;
    let checks = (spec.run)(p, &out)?;
    for c in &checks {
        println!("{}", c.line());
    }
    Ok(checks)
}

fn run_all(p: &Params) -> Result<Vec<Check>, CliError> {
    let root = Output::create(p)?;
    let skip: Vec<String> = p.list("skip")?;
    let mut checks = Vec::new();
    let mut failures = Vec::new();
    for spec in COMMANDS {
        if skip.iter().any(|s| s == spec.name) {
            continue;
        }
        println!("== {}", spec.name);
        let dir = root.dir().join(spec.name);
        let mut sub = p.nested(spec.name, spec.params, &dir);
        if spec.name == "exponent-fit" {
            let csv = root.dir().join("smallball").join("results.csv");
            if !Path::new(&csv).exists() {
                println!("skipped: no smallball results");
                continue;
            }
            sub.set("in", &csv.display().to_string());
        }
        match execute(spec, &sub) {
            Ok(c) => checks.extend(c.into_iter().map(|c| Check {
                name: format!("{}: {}", spec.name, c.name),
                ..c
            })),
            Err(e) => {
                eprintln!("error in {}: {e}", spec.name);
                failures.push(e);
            }
        }
    }
    root.summary(p, &checks, &serde_json::Value::Null)?;
    match failures.into_iter().max_by_key(|e| e.code) {
        Some(e) => Err(e),
        None => Ok(checks),
    }
}

fn dispatch(m: &ArgMatches) -> Result<(Vec<Check>, bool), CliError> {
    let (name, sub) = m.subcommand().expect("subcommand is required");
    let (p, checks) = if name == "all" {
        let p = Params::resolve(name, ALL_PARAMS, sub)?;
        init_threads(&p)?;
        let c = run_all(&p)?;
        (p, c)
    } else {
        let spec = commands::find(name).expect("clap only accepts known subcommands");
        let p = Params::resolve(name, spec.params, sub)?;
        init_threads(&p)?;
        let c = execute(spec, &p)?;
        (p, c)
    };
    Ok((checks, p.flag("check")?))
}

fn main() -> ExitCode {
    let m = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { error::CONFIG as u8 } else { 0 });
        }
    };
    match dispatch(&m) {
        Ok((checks, strict)) => {
            if strict && checks.iter().any(|c| !c.pass) {
                ExitCode::from(CHECK_FAILED as u8)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_tree_is_consistent() {
        cli().debug_assert();
    }

    #[test]
    fn every_command_has_unique_keys() {
        for spec in COMMANDS {
            let mut keys: Vec<&str> = params::COMMON.iter().chain(spec.params).map(|d| d.key).collect();
            keys.sort();
            let n = keys.len();
            keys.dedup();
            assert_eq!(keys.len(), n, "{}", spec.name);
        }
    }
}
