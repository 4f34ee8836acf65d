use std::fmt;

/// Error with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub msg: String,
}

pub const CONFIG: i32 = 2;
pub const NUMERIC: i32 = 3;
pub const CHECK_FAILED: i32 = 4;

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError {
            code: CONFIG,
            msg: msg.into(),
        }
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        CliError {
            code: NUMERIC,
            msg: msg.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

impl From<shelab::Error> for CliError {
    fn from(e: shelab::Error) -> Self {
        use shelab::Error as E;
        let code = match e {
            E::Domain(_) | E::Config(_) | E::Contract { .. } => CONFIG,
            E::Singularity { .. } | E::Numeric(_) | E::Coverage(_) | E::Fit(_) | E::Conditioning { .. } => NUMERIC,
        };
        CliError {
            code,
            msg: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::config(format!("i/o error: {e}"))
    }
}
