//! Result files: manifest, JSON summary, CSV tables and plots.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use crate::error::CliError;
use crate::params::Params;

/// Version of the `summary.json` layout.
pub const SCHEMA: u32 = 1;

/// A named pass/fail verdict with a one-line explanation.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            pass,
            detail: detail.into(),
        }
    }

    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.pass { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

pub struct Output {
    dir: PathBuf,
}

impl Output {
    /// Creates the directory and writes `manifest.txt`.
    pub fn create(params: &Params) -> Result<Output, CliError> {
        let dir = params.out_dir().to_path_buf();
        fs::create_dir_all(&dir)
            .map_err(|e| CliError::config(format!("cannot create {}: {e}", dir.display())))?;
        let out = Output { dir };
        out.text("manifest.txt", &params.manifest())?;
        Ok(out)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn text(&self, name: &str, contents: &str) -> Result<(), CliError> {
        fs::write(self.dir.join(name), contents)?;
        Ok(())
    }

    pub fn csv<I: IntoIterator<Item = String>>(&self, name: &str, header: &str, rows: I) -> Result<(), CliError> {
        let mut s = String::from(header);
        s.push('\n');
        for r in rows {
            s.push_str(&r);
            s.push('\n');
        }
        self.text(name, &s)
    }

    /// `summary.json`: schema, command, checks and the command's report.
    pub fn summary<R: Serialize>(&self, params: &Params, checks: &[Check], report: &R) -> Result<(), CliError> {
        let value = json!({
            "schema": SCHEMA,
            "command": params.command,
            "version": env!("CARGO_PKG_VERSION"),
            "checks": checks,
            "report": report,
        });
        let text = serde_json::to_string_pretty(&value)
            .map_err(|e| CliError::numeric(format!("cannot serialize summary: {e}")))?;
        self.text("summary.json", &(text + "\n"))
    }
}
