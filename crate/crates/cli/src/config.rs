//! Run configuration: defaults, then the TOML file, then command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use threathunt_core::data::{FeatureConfig, PreprocessConfig};
use threathunt_core::gan::GanConfig;
use threathunt_core::{LabelCodec, ModelConfig, SplitSpec};

use crate::InputError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub raw_csv: Option<PathBuf>,
    pub bundle_dir: PathBuf,
    pub augmented_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub history: PathBuf,
    pub report_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            raw_csv: None,
            bundle_dir: "out/bundle".into(),
            augmented_dir: "out/bundle-augmented".into(),
            checkpoint: "out/model.json".into(),
            history: "out/history.csv".into(),
            report_dir: "out/report".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub test_fraction: f64,
    pub stratified: bool,
    pub subsample_fraction: Option<f64>,
    /// JSON file with `label_column`, `drop_columns`, `one_hot_columns`;
    /// the shipped Edge-IIoT recipe when absent.
    pub feature_config: Option<PathBuf>,
}

impl Default for DataSection {
    fn default() -> Self {
        let split = SplitSpec::default();
        Self {
            test_fraction: split.test_fraction,
            stratified: split.stratified,
            subsample_fraction: None,
            feature_config: None,
        }
    }
}

/// Which classes to raise and to what count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    /// Classes multiplied by `factor`.
    pub classes: Vec<String>,
    pub factor: f64,
    /// Explicit per-class targets; these win over `factor`.
    pub targets: BTreeMap<String, usize>,
}

impl Default for AugmentSection {
    fn default() -> Self {
        Self {
            classes: vec!["Fingerprinting".into(), "Port_Scanning".into(), "MITM".into()],
            factor: 5.0,
            targets: BTreeMap::new(),
        }
    }
}

impl AugmentSection {
    /// Per-class target counts given the current counts. Classes not named
    /// keep their count.
    pub fn resolve(&self, codec: &LabelCodec, counts: &[usize]) -> Result<Vec<usize>, InputError> {
        if !(self.factor >= 1.0 && self.factor.is_finite()) {
            return Err(InputError(format!("augment factor must be at least 1, got {}", self.factor)));
        }
        let mut targets = counts.to_vec();
        let lookup = |name: &str| {
            codec
                .encode(name)
                .ok_or_else(|| InputError(format!("unknown class `{name}` in augmentation settings")))
        };
        for name in &self.classes {
            let c = lookup(name)?;
            targets[c] = (counts[c] as f64 * self.factor).round() as usize;
        }
        for (name, &n) in &self.targets {
            let c = lookup(name)?;
            if n < counts[c] {
                return Err(InputError(format!(
                    "target {n} for {name} is below its current count {}",
                    counts[c]
                )));
            }
            targets[c] = n;
        }
        Ok(targets)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Single seed for splitting, subsampling, initialisation, shuffling,
    /// dropout and GAN training.
    pub seed: u64,
    pub threads: Option<usize>,
    pub paths: Paths,
    pub data: DataSection,
    pub model: ModelConfig,
    pub gan: GanConfig,
    pub augment: AugmentSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            threads: None,
            paths: Paths::default(),
            data: DataSection::default(),
            model: ModelConfig::default(),
            gan: GanConfig::default(),
            augment: AugmentSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, InputError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| InputError(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| InputError(format!("{}: {}", path.display(), e.0)))
    }

    pub fn from_toml(text: &str) -> Result<Self, InputError> {
        toml::from_str(text).map_err(|e| InputError(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn split(&self) -> SplitSpec {
        SplitSpec {
            test_fraction: self.data.test_fraction,
            stratified: self.data.stratified,
            seed: self.seed,
        }
    }

    pub fn preprocess(&self) -> Result<PreprocessConfig, InputError> {
        let features = match &self.data.feature_config {
            None => FeatureConfig::edge_iiot(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| InputError(format!("cannot read feature config {}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| InputError(format!("{}: {e}", p.display())))?
            }
        };
        Ok(PreprocessConfig {
            features,
            split: self.split(),
            subsample_fraction: self.data.subsample_fraction,
            seed: self.seed,
        })
    }

    pub fn gan(&self) -> GanConfig {
        GanConfig {
            seed: self.seed,
            ..self.gan.clone()
        }
    }

    pub fn validate(&self) -> Result<(), InputError> {
        let wrap = |e: threathunt_core::Error| InputError(e.to_string());
        self.split().validate().map_err(wrap)?;
        self.model.validate().map_err(wrap)?;
        self.gan.validate().map_err(wrap)?;
        if let Some(f) = self.data.subsample_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return Err(InputError(format!("subsample_fraction must lie in (0, 1], got {f}")));
            }
        }
        if self.threads == Some(0) {
            return Err(InputError("threads must be at least 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = RunConfig::default();
        cfg.model.epochs = 3;
        cfg.data.subsample_fraction = Some(0.1);
        cfg.augment.targets.insert("MITM".into(), 500);
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("[model]\nepoch = 3\n").is_err());
    }

    #[test]
    fn seed_reaches_every_component() {
        let cfg = RunConfig {
            seed: 9,
            ..RunConfig::default()
        };
        assert_eq!(cfg.split().seed, 9);
        assert_eq!(cfg.gan().seed, 9);
        assert_eq!(cfg.preprocess().unwrap().seed, 9);
    }

    #[test]
    fn augmentation_targets() {
        let codec = LabelCodec::edge_iiot();
        let counts: Vec<usize> = (1..=15).collect();
        let mut section = AugmentSection::default();
        section.targets.insert("Normal".into(), 10);
        let t = section.resolve(&codec, &counts).unwrap();
        assert_eq!(t[codec.encode("Normal").unwrap()], 10);
        let mitm = codec.encode("MITM").unwrap();
        assert_eq!(t[mitm], counts[mitm] * 5);
        let xss = codec.encode("XSS").unwrap();
        assert_eq!(t[xss], counts[xss]);
        section.classes.push("Nope".into());
        assert!(section.resolve(&codec, &counts).is_err());
    }
}
