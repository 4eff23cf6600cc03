use std::fs;
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::container::Container;

/// Containers up to this many encoded bytes travel inline as base64.
pub const INLINE_LIMIT: usize = 1 << 20;

/// A container either inlined as base64 or referenced by file path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TensorRef {
    Inline { inline: String },
    Path { path: String },
}

impl TensorRef {
    pub fn decode(&self) -> Result<Container, String> {
        let bytes = match self {
            TensorRef::Inline { inline } => STANDARD
                .decode(inline)
                .map_err(|e| format!("inline tensor is not base64: {e}"))?,
            TensorRef::Path { path } => {
                fs::read(path).map_err(|e| format!("tensor file {path}: {e}"))?
            }
        };
        Container::decode(&bytes).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone)]
pub struct WireCodec {
    inline_limit: usize,
    spill_dir: PathBuf,
}

impl Default for WireCodec {
    fn default() -> Self {
        Self::new(std::env::temp_dir().join("vrefine-wire"))
    }
}

impl WireCodec {
    /// Large tensors are written to `spill_dir`, named by content hash.
    pub fn new(spill_dir: impl Into<PathBuf>) -> Self {
        Self {
            inline_limit: INLINE_LIMIT,
            spill_dir: spill_dir.into(),
        }
    }

    pub fn with_inline_limit(mut self, limit: usize) -> Self {
        self.inline_limit = limit;
        self
    }

    pub fn spill_dir(&self) -> &Path {
        &self.spill_dir
    }

    pub fn encode(&self, container: &Container) -> Result<TensorRef, String> {
        let bytes = container.encode();
        if bytes.len() <= self.inline_limit {
            return Ok(TensorRef::Inline {
                inline: STANDARD.encode(&bytes),
            });
        }
        fs::create_dir_all(&self.spill_dir)
            .map_err(|e| format!("spill dir {}: {e}", self.spill_dir.display()))?;
        let digest = Sha256::digest(&bytes);
        let name: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        let path = self.spill_dir.join(format!("{name}.vrtc"));
        if !path.exists() {
            // Write-then-rename so concurrent readers never see a partial file.
            let tmp = self
                .spill_dir
                .join(format!("{name}.{}.tmp", std::process::id()));
            fs::write(&tmp, &bytes).map_err(|e| format!("{}: {e}", tmp.display()))?;
            fs::rename(&tmp, &path).map_err(|e| format!("{}: {e}", path.display()))?;
        }
        let path = path
            .canonicalize()
            .map_err(|e| format!("{}: {e}", path.display()))?;
        Ok(TensorRef::Path {
            path: path.to_string_lossy().into_owned(),
        })
    }
}
