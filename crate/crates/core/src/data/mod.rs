//! Edge-IIoT ingestion and preprocessing.
//!
//! The recipe runs load → clean → select → encode → (subsample) → split →
//! standardize. Encoders are fitted on the whole cleaned table so every
//! category keeps its indicator column; standardization statistics are
//! fitted on the training split only.

pub mod bundle;
pub mod encode;
pub mod split;
pub mod standardize;
pub mod table;

use std::path::Path;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bundle::{Bundle, BundleManifest, PartInfo, BUNDLE_FORMAT};
pub use encode::{encode_labels_and_categoricals, FeatureEncoder, FeatureEncoding, LabelCodec, EDGE_IIOT_CLASSES};
pub use split::{split_indices, stratified_subsample, SplitSpec};
pub use standardize::StandardizationStats;
pub use table::{clean, load_csv, select_features, Column, RawTable};

/// Row-major feature matrix with class labels and synthetic-row flags.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: Vec<f64>,
    width: usize,
    pub labels: Vec<usize>,
    pub synthetic: Vec<bool>,
    pub codec: LabelCodec,
}

impl LabeledDataset {
    pub fn new(features: Vec<f64>, width: usize, labels: Vec<usize>, codec: LabelCodec) -> Result<Self> {
        let synthetic = vec![false; labels.len()];
        Self::with_flags(features, width, labels, synthetic, codec)
    }

    pub fn with_flags(
        features: Vec<f64>,
        width: usize,
        labels: Vec<usize>,
        synthetic: Vec<bool>,
        codec: LabelCodec,
    ) -> Result<Self> {
        if width == 0 || features.len() != labels.len() * width || synthetic.len() != labels.len() {
            return Err(Error::Data(format!(
                "dataset shape mismatch: {} values, width {width}, {} labels",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= codec.len()) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                num_classes: codec.len(),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "dataset" });
        }
        Ok(Self {
            features,
            width,
            labels,
            synthetic,
            codec,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.width..(i + 1) * self.width]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.codec.len()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Row indices carrying label `class`.
    pub fn rows_of_class(&self, class: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == class).collect()
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        let mut features = Vec::with_capacity(rows.len() * self.width);
        for &r in rows {
            features.extend_from_slice(self.row(r));
        }
        Self {
            features,
            width: self.width,
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            synthetic: rows.iter().map(|&r| self.synthetic[r]).collect(),
            codec: self.codec.clone(),
        }
    }

    /// Rows `[0, n)` of the `class` subset as an `n × width` matrix.
    pub fn class_matrix(&self, class: usize) -> Vec<f64> {
        let mut out = Vec::new();
        for i in self.rows_of_class(class) {
            out.extend_from_slice(self.row(i));
        }
        out
    }
}

/// Column choices for turning the raw CSV into model inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureConfig {
    pub label_column: String,
    pub drop_columns: Vec<String>,
    pub one_hot_columns: Vec<String>,
}

const EDGE_IIOT_FEATURES: &str = include_str!("../../config/edge_iiot_features.json");

impl FeatureConfig {
    /// Shipped Edge-IIoT column recipe (yields 95 encoded features on the
    /// published ML CSV).
    pub fn edge_iiot() -> Self {
        serde_json::from_str(EDGE_IIOT_FEATURES).expect("shipped feature config parses")
    }
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self::edge_iiot()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub features: FeatureConfig,
    pub split: SplitSpec,
    /// Keep this fraction of each class (after encoding) before splitting.
    pub subsample_fraction: Option<f64>,
    pub seed: u64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            features: FeatureConfig::edge_iiot(),
            split: SplitSpec::default(),
            subsample_fraction: None,
            seed: 42,
        }
    }
}

/// Runs the full preprocessing recipe on a CSV file.
pub fn preprocess(csv: &Path, cfg: &PreprocessConfig) -> Result<Bundle> {
    let codec = LabelCodec::edge_iiot();
    let raw = load_csv(csv, &cfg.features.label_column)?;
    let source_rows = raw.row_count();
    let cleaned = clean(&raw)?;
    info!("{source_rows} rows read, {} after removing duplicates", cleaned.row_count());
    let selected = select_features(&cleaned, &cfg.features.drop_columns, &cfg.features.label_column)?;
    let (encoded, encoder) =
        encode_labels_and_categoricals(&selected, &cfg.features.label_column, &cfg.features.one_hot_columns, &codec)?;
    if encoded.width != crate::FEATURE_DIM {
        warn!("encoded width is {}, the classifier default expects {}", encoded.width, crate::FEATURE_DIM);
    }
    let all = LabeledDataset::new(encoded.features, encoded.width, encoded.labels, codec.clone())?;
    let all = match cfg.subsample_fraction {
        Some(f) => all.subset(&stratified_subsample(&all.labels, codec.len(), f, cfg.seed)?),
        None => all,
    };
    if all.is_empty() {
        return Err(Error::EmptyDataset(format!("{} has no data rows", csv.display())));
    }
    let (train_idx, test_idx) = split_indices(&all.labels, &codec, &cfg.split)?;
    let mut train = all.subset(&train_idx);
    let mut test = all.subset(&test_idx);
    let stats = StandardizationStats::fit(&train.features, train.width());
    stats.apply(&mut train.features);
    stats.apply(&mut test.features);

    let manifest = BundleManifest {
        format: BUNDLE_FORMAT.to_string(),
        feature_width: encoder.width(),
        feature_names: encoder.feature_names(),
        label_column: cfg.features.label_column.clone(),
        drop_columns: cfg.features.drop_columns.clone(),
        one_hot_columns: cfg.features.one_hot_columns.clone(),
        codec,
        encoder,
        stats,
        split: cfg.split,
        subsample_fraction: cfg.subsample_fraction,
        seed: cfg.seed,
        source_rows,
        cleaned_rows: cleaned.row_count(),
        train: PartInfo::of(&train),
        test: PartInfo::of(&test),
        augmentation: None,
    };
    Ok(Bundle { manifest, train, test })
}
