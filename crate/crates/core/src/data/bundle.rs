//! On-disk dataset bundles.
//!
//! A bundle is a directory:
//!
//! | file                     | content                                   |
//! |--------------------------|-------------------------------------------|
//! | `manifest.json`          | [`BundleManifest`]                        |
//! | `train.features.f64le`   | train matrix, row-major little-endian f64 |
//! | `train.labels.u32le`     | train labels, little-endian u32           |
//! | `train.synthetic.u8`     | one byte per train row, 1 = synthetic     |
//! | `test.features.f64le`    | test matrix                               |
//! | `test.labels.u32le`      | test labels                               |
//! | `test.synthetic.u8`      | always zeros                              |

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gan::AugmentationSummary;
use crate::io::{read, replace_dir_atomic, write_atomic};

use super::{FeatureEncoder, LabelCodec, LabeledDataset, SplitSpec, StandardizationStats};

pub const BUNDLE_FORMAT: &str = "threathunt-bundle/1";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartInfo {
    pub rows: usize,
    pub class_counts: Vec<usize>,
    pub synthetic_rows: usize,
}

impl PartInfo {
    pub fn of(d: &LabeledDataset) -> Self {
        Self {
            rows: d.len(),
            class_counts: d.class_counts(),
            synthetic_rows: d.synthetic.iter().filter(|&&s| s).count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub format: String,
    pub feature_width: usize,
    pub feature_names: Vec<String>,
    pub label_column: String,
    pub drop_columns: Vec<String>,
    pub one_hot_columns: Vec<String>,
    pub codec: LabelCodec,
    pub encoder: FeatureEncoder,
    pub stats: StandardizationStats,
    pub split: SplitSpec,
    pub subsample_fraction: Option<f64>,
    pub seed: u64,
    pub source_rows: usize,
    pub cleaned_rows: usize,
    pub train: PartInfo,
    pub test: PartInfo,
    pub augmentation: Option<AugmentationSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub manifest: BundleManifest,
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

fn f64_bytes(v: &[f64]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn label_bytes(v: &[usize]) -> Vec<u8> {
    v.iter().flat_map(|&x| (x as u32).to_le_bytes()).collect()
}

fn part_name(part: &str, suffix: &str) -> String {
    format!("{part}.{suffix}")
}

impl Bundle {
    /// Refreshes the per-part counts after the datasets changed.
    pub fn refresh_counts(&mut self) {
        self.manifest.train = PartInfo::of(&self.train);
        self.manifest.test = PartInfo::of(&self.test);
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        self.write_with(dir, &[])
    }

    /// Writes the bundle plus extra `(file name, bytes)` entries; the
    /// directory appears complete or not at all.
    pub fn write_with(&self, dir: &Path, extra: &[(&str, Vec<u8>)]) -> Result<()> {
        let manifest = serde_json::to_vec_pretty(&self.manifest)?;
        replace_dir_atomic(dir, |tmp| {
            for (name, bytes) in extra {
                write_atomic(&tmp.join(name), bytes)?;
            }
            for (name, d) in [("train", &self.train), ("test", &self.test)] {
                write_atomic(&tmp.join(part_name(name, "features.f64le")), &f64_bytes(&d.features))?;
                write_atomic(&tmp.join(part_name(name, "labels.u32le")), &label_bytes(&d.labels))?;
                let flags: Vec<u8> = d.synthetic.iter().map(|&s| u8::from(s)).collect();
                write_atomic(&tmp.join(part_name(name, "synthetic.u8")), &flags)?;
            }
            write_atomic(&tmp.join(MANIFEST_FILE), &manifest)
        })
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let manifest: BundleManifest = serde_json::from_slice(&read(&dir.join(MANIFEST_FILE))?)
            .map_err(|e| Error::Format(format!("{}: {e}", dir.join(MANIFEST_FILE).display())))?;
        if manifest.format != BUNDLE_FORMAT {
            return Err(Error::Format(format!(
                "bundle format `{}` is not supported (expected `{BUNDLE_FORMAT}`)",
                manifest.format
            )));
        }
        let train = read_part(dir, "train", &manifest, &manifest.train)?;
        let test = read_part(dir, "test", &manifest, &manifest.test)?;
        Ok(Self { manifest, train, test })
    }
}

fn read_part(dir: &Path, name: &str, m: &BundleManifest, info: &PartInfo) -> Result<LabeledDataset> {
    let features: Vec<f64> = read(&dir.join(part_name(name, "features.f64le")))?
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let labels: Vec<usize> = read(&dir.join(part_name(name, "labels.u32le")))?
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    let synthetic: Vec<bool> = read(&dir.join(part_name(name, "synthetic.u8")))?
        .iter()
        .map(|&b| b != 0)
        .collect();
    if labels.len() != info.rows || features.len() != info.rows * m.feature_width {
        return Err(Error::Format(format!(
            "{name} part of {} does not match its manifest",
            dir.display()
        )));
    }
    LabeledDataset::with_flags(features, m.feature_width, labels, synthetic, m.codec.clone())
}
