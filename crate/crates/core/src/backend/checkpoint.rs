use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BackendError, Result, ToyBackend, TrainableBackend, Vocabulary, ModelBackend};

pub const CHECKPOINT_FORMAT: &str = "infergap-toy-backend";
pub const CHECKPOINT_VERSION: u32 = 1;

/// JSON container for a [`ToyBackend`]. Parameters are written with
/// shortest round-trip formatting, so save/load is bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyCheckpoint {
    pub format: String,
    pub version: u32,
    pub vocab: Vec<String>,
    pub dim: usize,
    pub seed: u64,
    /// Digest of the training configuration that produced the parameters.
    pub config_digest: Option<String>,
    pub e: Vec<f64>,
    pub u: Vec<f64>,
    pub b: Vec<f64>,
}

impl ToyCheckpoint {
    pub fn from_backend(model: &ToyBackend, config_digest: Option<String>) -> Self {
        let n = model.vocab().len() * model.dim();
        let p = model.params();
        ToyCheckpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            vocab: model.vocab().tokens().to_vec(),
            dim: model.dim(),
            seed: model.seed(),
            config_digest,
            e: p[..n].to_vec(),
            u: p[n..2 * n].to_vec(),
            b: p[2 * n..].to_vec(),
        }
    }

    pub fn into_backend(self) -> Result<ToyBackend> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(BackendError::Checkpoint(format!(
                "expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION}, found {} v{}",
                self.format, self.version
            )));
        }
        let vocab = Vocabulary::from_tokens(self.vocab)?;
        let n = vocab.len() * self.dim;
        if self.e.len() != n || self.u.len() != n || self.b.len() != vocab.len() {
            return Err(BackendError::Checkpoint("parameter shapes do not match vocabulary and dim".into()));
        }
        let mut params = self.e;
        params.extend(self.u);
        params.extend(self.b);
        let model = ToyBackend::from_parts(vocab, self.dim, self.seed, params)?;
        debug_assert_eq!(model.num_params(), 2 * n + model.vocab().len());
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| BackendError::Checkpoint(e.to_string()))?;
        fs::write(path, text).map_err(|source| BackendError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| BackendError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| BackendError::Checkpoint(e.to_string()))
    }
}
