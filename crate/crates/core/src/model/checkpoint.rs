//! Versioned model checkpoints.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{LabelCodec, StandardizationStats};
use crate::error::{Error, Result};
use crate::io::{read, write_atomic};

use super::Classifier;

pub const CHECKPOINT_FORMAT: &str = "threathunt-checkpoint/1";

/// A trained classifier together with the label table and standardization
/// it was trained against. Holds no timestamps, so equal runs give equal
/// files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub seed: u64,
    pub codec: LabelCodec,
    pub stats: StandardizationStats,
    pub model: Classifier,
}

impl Checkpoint {
    pub fn new(model: Classifier, codec: LabelCodec, stats: StandardizationStats, seed: u64) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            seed,
            codec,
            stats,
            model,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec(self)?;
        bytes.push(b'\n');
        write_atomic(path, &bytes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read(path)?;
        let head: serde_json::Value = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Format(format!("{}: not a checkpoint: {e}", path.display())))?;
        let format = head.get("format").and_then(|f| f.as_str()).unwrap_or("<missing>");
        if format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!(
                "{}: checkpoint format `{format}` is not supported (expected `{CHECKPOINT_FORMAT}`)",
                path.display()
            )));
        }
        let ck: Self = serde_json::from_value(head)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        ck.model.config.validate()?;
        Ok(ck)
    }

    /// Fails unless this checkpoint was trained on data encoded with `codec`
    /// and standardized with `stats`.
    pub fn check_compatible(&self, codec: &LabelCodec, stats: &StandardizationStats) -> Result<()> {
        if &self.codec != codec {
            return Err(Error::Format(format!(
                "{CHECKPOINT_FORMAT}: label table differs from the dataset's ({} vs {} classes)",
                self.codec.len(),
                codec.len()
            )));
        }
        if &self.stats != stats {
            return Err(Error::Format(format!(
                "{CHECKPOINT_FORMAT}: standardization statistics differ from the dataset's"
            )));
        }
        if self.model.config.num_classes != codec.len() {
            return Err(Error::Format(format!(
                "{CHECKPOINT_FORMAT}: model has {} outputs, label table has {} classes",
                self.model.config.num_classes,
                codec.len()
            )));
        }
        Ok(())
    }
}
