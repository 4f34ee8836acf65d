//! Flat `key=value` parameters: defaults, then a config file, then flags.
//!
//! The resolved set is written back as `manifest.txt` in the same format, so
//! `--config manifest.txt` reproduces a run.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use clap::{Arg, ArgAction, ArgMatches, Command};

use crate::error::CliError;

/// One parameter of a subcommand.
#[derive(Debug, Clone, Copy)]
pub struct ParamDef {
    pub key: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

pub const fn param(key: &'static str, default: &'static str, help: &'static str) -> ParamDef {
    ParamDef { key, default, help }
}

/// Parameters every subcommand accepts.
pub const COMMON: &[ParamDef] = &[
    param("seed", "1", "random seed"),
    param("threads", "0", "worker threads; 0 uses SHELAB_THREADS or all cores"),
    param("check", "false", "exit 4 when any check fails"),
    param("svg", "false", "also write a log-log plot"),
];

/// Switches given as bare flags on the command line.
const SWITCHES: &[&str] = &["check", "svg"];

/// Keys a manifest carries besides the parameters.
const RESERVED: &[&str] = &["command", "version"];

/// Adds `--key VALUE` (or a bare switch) for each parameter.
pub fn add_args(mut cmd: Command, defs: &[ParamDef]) -> Command {
    for d in COMMON.iter().chain(defs) {
        let help = format!("{} [default: {}]", d.help, if d.default.is_empty() { "none" } else { d.default });
        let arg = Arg::new(d.key).long(d.key).help(help);
        cmd = cmd.arg(if SWITCHES.contains(&d.key) {
            arg.action(ArgAction::SetTrue)
        } else {
            arg.value_name("VALUE").num_args(1).allow_hyphen_values(true)
        });
    }
    cmd.arg(
        Arg::new("out")
            .long("out")
            .value_name("DIR")
            .help("output directory [default: out/<command>]"),
    )
    .arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .help("flat key=value file; flags override it"),
    )
}

/// Parses a flat `key=value` text. Blank lines and `#` comments are skipped.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("config line {}: expected key=value", i + 1)))?;
        let k = k.trim().to_string();
        if out.insert(k.clone(), v.trim().to_string()).is_some() {
            return Err(CliError::config(format!("config line {}: duplicate key {k}", i + 1)));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Params {
    pub command: String,
    values: BTreeMap<String, String>,
}

impl Params {
    /// Defaults, overridden by the `--config` file, overridden by flags.
    pub fn resolve(command: &str, defs: &[ParamDef], m: &ArgMatches) -> Result<Params, CliError> {
        let all: Vec<&ParamDef> = COMMON.iter().chain(defs).collect();
        let mut values: BTreeMap<String, String> = all
            .iter()
            .map(|d| (d.key.to_string(), d.default.to_string()))
            .collect();
        values.insert("out".into(), format!("out/{command}"));
        if let Some(path) = m.get_one::<String>("config") {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::config(format!("cannot read config {path}: {e}")))?;
            for (k, v) in parse_config(&text)? {
                match k.as_str() {
                    "command" if v != command => {
                        return Err(CliError::config(format!(
                            "config is for command {v}, not {command}"
                        )))
                    }
                    k if RESERVED.contains(&k) => {}
                    _ if values.contains_key(&k) => {
                        values.insert(k, v);
                    }
                    _ => return Err(CliError::config(format!("unknown config key {k}"))),
                }
            }
        }
        for d in &all {
            if SWITCHES.contains(&d.key) {
                if m.get_flag(d.key) {
                    values.insert(d.key.into(), "true".into());
                }
            } else if let Some(v) = m.get_one::<String>(d.key) {
                values.insert(d.key.into(), v.clone());
            }
        }
        if let Some(v) = m.get_one::<String>("out") {
            values.insert("out".into(), v.clone());
        }
        Ok(Params {
            command: command.to_string(),
            values,
        })
    }

    /// Parameters for a nested run of `command` with its defaults.
    pub fn nested(&self, command: &str, defs: &[ParamDef], out: &Path) -> Params {
        let mut values: BTreeMap<String, String> = COMMON
            .iter()
            .chain(defs)
            .map(|d| (d.key.to_string(), d.default.to_string()))
            .collect();
        for k in ["seed", "threads", "check", "svg"] {
            values.insert(k.into(), self.values[k].clone());
        }
        values.insert("out".into(), out.display().to_string());
        Params {
            command: command.to_string(),
            values,
        }
    }

    pub fn set(&mut self, key: &str, value: &str) {
        self.values.insert(key.into(), value.into());
    }

    pub fn str(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        let raw = self.str(key);
        raw.parse()
            .map_err(|e| CliError::config(format!("--{key} {raw:?}: {e}")))
    }

    /// Comma-separated list; empty text gives an empty list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, CliError>
    where
        T::Err: Display,
    {
        let raw = self.str(key).trim();
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|e| CliError::config(format!("--{key} item {s:?}: {e}")))
            })
            .collect()
    }

    pub fn flag(&self, key: &str) -> Result<bool, CliError> {
        self.get(key)
    }

    pub fn out_dir(&self) -> &Path {
        Path::new(self.str("out"))
    }

    /// `key=value` lines, sorted, with the command and code version first.
    pub fn manifest(&self) -> String {
        let mut s = format!("command={}\nversion={}\n", self.command, env!("CARGO_PKG_VERSION"));
        for (k, v) in &self.values {
            s.push_str(&format!("{k}={v}\n"));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn command(defs: &[ParamDef]) -> Command {
        add_args(Command::new("t"), defs)
    }

    const DEFS: &[ParamDef] = &[param("gamma", "0.5", "g"), param("eps", "0.3,0.2", "e")];

    #[test]
    fn flags_override_defaults() {
        let m = command(DEFS).get_matches_from(["t", "--gamma", "0.25", "--check"]);
        let p = Params::resolve("x", DEFS, &m).unwrap();
        assert_eq!(p.get::<f64>("gamma").unwrap(), 0.25);
        assert_eq!(p.list::<f64>("eps").unwrap(), vec![0.3, 0.2]);
        assert!(p.flag("check").unwrap());
        assert!(!p.flag("svg").unwrap());
        assert_eq!(p.str("out"), "out/x");
    }

    #[test]
    fn manifest_round_trips() {
        let m = command(DEFS).get_matches_from(["t", "--eps", "0.1", "--seed", "9"]);
        let p = Params::resolve("x", DEFS, &m).unwrap();
        let parsed = parse_config(&p.manifest()).unwrap();
        assert_eq!(parsed["command"], "x");
        assert_eq!(parsed["eps"], "0.1");
        assert_eq!(parsed["seed"], "9");
        assert_eq!(parsed.len(), p.values.len() + 2);
    }

    #[test]
    fn config_errors() {
        assert!(parse_config("a=1\nb").is_err());
        assert!(parse_config("a=1\na=2").is_err());
        let ok = parse_config("# note\n\n a = 1 \n").unwrap();
        assert_eq!(ok["a"], "1");
    }

    #[test]
    fn bad_numbers_are_config_errors() {
        let m = command(DEFS).get_matches_from(["t", "--gamma", "half"]);
        let p = Params::resolve("x", DEFS, &m).unwrap();
        assert_eq!(p.get::<f64>("gamma").unwrap_err().code, 2);
    }
}
