use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendRole, HttpOptions, WireCodec};
use crate::latent::DEFAULT_DOWNSAMPLE;
use crate::templates::TemplatePaths;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

pub const CONFIG_SCHEMA: &str = include_str!("../schemas/config.schema.json");

fn check_schema(value: &serde_json::Value) -> Result<(), ConfigError> {
    static VALIDATOR: std::sync::OnceLock<jsonschema::Validator> = std::sync::OnceLock::new();
    let validator = VALIDATOR.get_or_init(|| {
        let doc = serde_json::from_str(CONFIG_SCHEMA).expect("config schema is JSON");
        jsonschema::validator_for(&doc).expect("config schema compiles")
    });
    let errors: Vec<String> = validator
        .iter_errors(value)
        .map(|e| format!("{e} at {}", e.instance_path()))
        .collect();
    if errors.is_empty() {
        Ok(())
    } else {
        Err(ConfigError::Invalid(errors.join("; ")))
    }
}

/// Pixel dims of the videos the text-to-video backend produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoDims {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Default for VideoDims {
    fn default() -> Self {
        Self {
            frames: 49,
            height: 480,
            width: 720,
            channels: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Candidates generated per round.
    pub k: usize,
    pub max_iterations: u32,
    pub base_seed: u64,
    pub downsample: usize,
    pub latent_channels: usize,
    pub allow_multi_object: bool,
    /// A video scoring at least this much is accepted as is.
    pub early_stop_score: f64,
    pub output_dir: PathBuf,
    pub backends: BTreeMap<BackendRole, String>,
    /// Worker threads for candidate generation; 0 uses every core.
    pub parallelism: usize,
    pub timeout_secs: u64,
    pub bearer_token: Option<String>,
    pub templates: TemplatePaths,
    pub video: VideoDims,
    /// Where large tensors are written for the backends to read.
    pub spill_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k: 5,
            max_iterations: 1,
            base_seed: 0,
            downsample: DEFAULT_DOWNSAMPLE,
            latent_channels: 4,
            allow_multi_object: false,
            early_stop_score: 1.0,
            output_dir: PathBuf::from("vrefine-out"),
            backends: BTreeMap::new(),
            parallelism: 0,
            timeout_secs: 30,
            bearer_token: None,
            templates: TemplatePaths::default(),
            video: VideoDims::default(),
            spill_dir: None,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let read_err = |message: String| ConfigError::Read {
            path: path.to_owned(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| read_err(e.to_string()))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| read_err(e.to_string()))?;
        Self::from_value(value).map_err(|e| match e {
            ConfigError::Invalid(m) => read_err(m),
            other => other,
        })
    }

    /// Checks `value` against the config schema, then deserializes and
    /// validates it.
    pub fn from_value(value: serde_json::Value) -> Result<Self, ConfigError> {
        check_schema(&value)?;
        let cfg: Self =
            serde_json::from_value(value).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_owned()));
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least 1");
        }
        if self.downsample == 0 {
            return bad("downsample must be at least 1");
        }
        if self.latent_channels == 0 {
            return bad("latent_channels must be at least 1");
        }
        if !(self.early_stop_score > 0.0 && self.early_stop_score <= 1.0) {
            return bad("early_stop_score must lie in (0, 1]");
        }
        if self.timeout_secs == 0 {
            return bad("timeout_secs must be positive");
        }
        let v = self.video;
        if v.frames == 0 || v.height == 0 || v.width == 0 || v.channels == 0 {
            return bad("video dims must be positive");
        }
        if self.base_seed.checked_add(self.k as u64).is_none() {
            return bad("base_seed + k overflows");
        }
        Ok(())
    }

    pub fn http_options(&self) -> HttpOptions {
        HttpOptions {
            timeout: Duration::from_secs(self.timeout_secs),
            bearer_token: self.bearer_token.clone(),
        }
    }

    pub fn wire_codec(&self) -> WireCodec {
        match &self.spill_dir {
            Some(dir) => WireCodec::new(dir),
            None => WireCodec::default(),
        }
    }
}
