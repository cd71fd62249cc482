//! Library side of the `regmin` command-line tool: run configurations, trace
//! files, certification and the batch suite runner.

pub mod commands;
pub mod options;
pub mod suite;
pub mod trace_io;

use std::fmt;
use std::path::{Path, PathBuf};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "REGMIN_OUT_DIR";

/// A failed command, carrying its exit-code class.
#[derive(Debug)]
pub enum Failure {
    /// Bad arguments, config files or input traces. Exit code 1.
    Usage(String),
    /// The solver or a precondition gate refused to proceed. Exit code 2.
    Solver(String),
    /// A certificate, rate bound or suite criterion did not hold. Exit code 3.
    Certification(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Solver(_) => 2,
            Failure::Certification(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Solver(m) | Failure::Certification(m) => m,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.message())
    }
}

impl std::error::Error for Failure {}

impl From<regmin::Error> for Failure {
    fn from(e: regmin::Error) -> Self {
        match e {
            regmin::Error::InvalidConfig(_) | regmin::Error::UnknownProblem(_) => Failure::Usage(e.to_string()),
            regmin::Error::NotInTargetSet { .. } => Failure::Certification(e.to_string()),
            _ => Failure::Solver(e.to_string()),
        }
    }
}

pub(crate) fn read_file(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))
}

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Solver(format!("cannot create {}: {e}", dir.display())))?;
    }
    std::fs::write(path, contents).map_err(|e| Failure::Solver(format!("cannot write {}: {e}", path.display())))
}

pub(crate) fn to_json<T: serde::Serialize>(value: &T) -> Result<String, Failure> {
    serde_json::to_string_pretty(value)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| Failure::Solver(format!("cannot serialize report: {e}")))
}

/// Explicit directory, else `$REGMIN_OUT_DIR`, else `fallback`.
pub fn resolve_out_dir(explicit: Option<PathBuf>, fallback: impl Into<PathBuf>) -> PathBuf {
    explicit
        .or_else(|| {
            std::env::var_os(OUT_DIR_ENV)
                .filter(|v| !v.is_empty())
                .map(PathBuf::from)
        })
        .unwrap_or_else(|| fallback.into())
}
