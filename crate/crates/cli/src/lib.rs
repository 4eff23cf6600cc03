//! Shared plumbing for the `vrefine` and `vrefine-mock` binaries.

pub mod args;
pub mod commands;

use std::fmt;
use std::path::{Path, PathBuf};

use serde_json::Value;
use vrefine_core::backends::BackendError;
use vrefine_core::config::ConfigError;
use vrefine_core::container::{Container, ContainerError};
use vrefine_core::pipeline::PipelineError;
use vrefine_core::planning::{DsgScore, PlanningError};
use vrefine_core::rps::RpsError;

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_BACKEND: u8 = 2;
pub const EXIT_CONFIG: u8 = 3;

/// Environment variable naming a config file when `--config` is absent.
pub const CONFIG_ENV: &str = "VIDEOREPAIR_CONFIG";

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Backend(String),
    FileFormat { path: PathBuf, message: String },
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Backend(_) => EXIT_BACKEND,
            CliError::FileFormat { .. } | CliError::Failed(_) => EXIT_FAILURE,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "ConfigError",
            CliError::Backend(_) => "BackendError",
            CliError::FileFormat { .. } => "FileFormatError",
            CliError::Failed(_) => "Error",
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) | CliError::Backend(m) | CliError::Failed(m) => {
                write!(f, "{}: {m}", self.kind())
            }
            CliError::FileFormat { path, message } => {
                write!(f, "FileFormatError: {}: {message}", path.display())
            }
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        match e {
            BackendError::Unbound(_) => CliError::Config(e.to_string()),
            other => CliError::Backend(other.to_string()),
        }
    }
}

impl From<PlanningError> for CliError {
    fn from(e: PlanningError) -> Self {
        match e {
            PlanningError::Backend(b) => b.into(),
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<RpsError> for CliError {
    fn from(e: RpsError) -> Self {
        match e {
            RpsError::Backend(b) => b.into(),
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        if e.unbound_role().is_some() {
            return CliError::Config(e.to_string());
        }
        match e {
            PipelineError::Backend(b) => b.into(),
            PipelineError::Planning(p) => p.into(),
            PipelineError::Rps(r) => r.into(),
            other if other.is_backend() => CliError::Backend(other.to_string()),
            other => CliError::Failed(other.to_string()),
        }
    }
}

/// Reads a container file, reporting any decoding problem as a file format
/// error against `path`.
pub fn read_container(path: &Path) -> Result<Container, CliError> {
    Container::read_file(path).map_err(|e| match e {
        ContainerError::Io(io) => CliError::Failed(format!("{}: {io}", path.display())),
        other => CliError::FileFormat {
            path: path.to_owned(),
            message: other.to_string(),
        },
    })
}

/// Decodes a container into a typed tensor, keeping format errors attributed
/// to `path`.
pub fn read_typed<T>(
    path: &Path,
    decode: impl FnOnce(Container) -> Result<T, ContainerError>,
) -> Result<T, CliError> {
    decode(read_container(path)?).map_err(|e| CliError::FileFormat {
        path: path.to_owned(),
        message: e.to_string(),
    })
}

/// Writes human lines or JSON lines to stdout.
#[derive(Debug, Clone, Copy)]
pub struct Output {
    pub json: bool,
}

impl Output {
    pub fn emit(&self, human: impl FnOnce() -> String, json: impl FnOnce() -> Value) {
        if self.json {
            println!("{}", json());
        } else {
            println!("{}", human());
        }
    }

    pub fn error(&self, e: &CliError) {
        eprintln!("{e}");
        if self.json {
            println!(
                "{}",
                serde_json::json!({"event": "error", "kind": e.kind(), "message": e.to_string(), "exit_code": e.exit_code()})
            );
        }
    }
}

/// `dsg=0.6 (3/5)`.
pub fn format_score(s: DsgScore) -> String {
    format!("dsg={:?} ({}/{})", s.value(), s.correct, s.total)
}

pub fn score_json(s: DsgScore) -> Value {
    serde_json::json!({"value": s.value(), "correct": s.correct, "total": s.total})
}

pub fn init_logging(verbosity: u8) {
    let level = match verbosity {
        0 => tracing_subscriber::filter::LevelFilter::WARN,
        1 => tracing_subscriber::filter::LevelFilter::INFO,
        _ => tracing_subscriber::filter::LevelFilter::DEBUG,
    };
    let _ = tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_max_level(level)
        .try_init();
}
