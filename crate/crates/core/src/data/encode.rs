//! Label codec and categorical feature encoders.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::table::{Column, RawTable};

/// The fifteen Edge-IIoT classes, in report order. `Normal` is index 0.
pub const EDGE_IIOT_CLASSES: [&str; 15] = [
    "Normal",
    "Backdoor",
    "Vulnerability_scanner",
    "DDoS_ICMP",
    "Password",
    "Port_Scanning",
    "DDoS_UDP",
    "Uploading",
    "DDoS_HTTP",
    "SQL_injection",
    "Ransomware",
    "DDoS_TCP",
    "XSS",
    "MITM",
    "Fingerprinting",
];

/// Bijection between class names and indices `0..len`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCodec {
    names: Vec<String>,
}

impl Default for LabelCodec {
    fn default() -> Self {
        Self::edge_iiot()
    }
}

impl LabelCodec {
    pub fn edge_iiot() -> Self {
        Self {
            names: EDGE_IIOT_CLASSES.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn new(names: Vec<String>) -> Result<Self> {
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != names.len() || names.is_empty() {
            return Err(Error::Config("class names must be unique and non-empty".into()));
        }
        Ok(Self { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn encode(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name.trim())
    }

    pub fn decode(&self, idx: usize) -> Option<&str> {
        self.names.get(idx).map(String::as_str)
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.encode(name)
            .ok_or_else(|| Error::Config(format!("unknown class `{name}`")))
    }
}

/// How one input column becomes model features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureEncoding {
    /// Passed through as-is.
    Numeric,
    /// One integer code per level, levels in first-appearance order. Unseen
    /// values map to -1.
    Label { levels: Vec<String> },
    /// One 0/1 indicator column per level. Unseen values give all zeros.
    OneHot { levels: Vec<String> },
}

impl FeatureEncoding {
    pub fn width(&self) -> usize {
        match self {
            FeatureEncoding::OneHot { levels } => levels.len(),
            _ => 1,
        }
    }
}

/// Code assigned to categories not seen at fit time.
pub const UNSEEN_CODE: f64 = -1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedColumn {
    pub name: String,
    pub encoding: FeatureEncoding,
}

/// Persisted encoding plan for every feature column, in output order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEncoder {
    pub label_column: String,
    pub columns: Vec<EncodedColumn>,
}

/// Output of [`FeatureEncoder::transform`].
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedTable {
    pub features: Vec<f64>,
    pub width: usize,
    pub labels: Vec<usize>,
    /// Cells whose category was not seen at fit time.
    pub unseen: usize,
}

fn level_text(col: &Column, row: usize) -> Option<String> {
    match col {
        Column::Numeric(v) => (!v[row].is_nan()).then(|| format_number(v[row])),
        Column::Categorical { .. } => col.text(row).map(str::to_string),
    }
}

fn format_number(v: f64) -> String {
    format!("{v}")
}

impl FeatureEncoder {
    /// Builds the plan: columns named in `one_hot` become indicator columns,
    /// other text columns get label codes, numeric columns pass through.
    pub fn fit(table: &RawTable, label_column: &str, one_hot: &[String]) -> Result<Self> {
        if table.index_of(label_column).is_none() {
            return Err(Error::Data(format!("label column `{label_column}` missing")));
        }
        for name in one_hot {
            if table.index_of(name).is_none() {
                return Err(Error::Config(format!("one-hot column `{name}` not in table")));
            }
        }
        let columns = table
            .names
            .iter()
            .zip(&table.columns)
            .filter(|(n, _)| n.as_str() != label_column)
            .map(|(name, col)| {
                let encoding = if one_hot.contains(name) {
                    FeatureEncoding::OneHot {
                        levels: distinct_levels(col),
                    }
                } else {
                    match col {
                        Column::Numeric(_) => FeatureEncoding::Numeric,
                        Column::Categorical { .. } => FeatureEncoding::Label {
                            levels: distinct_levels(col),
                        },
                    }
                };
                EncodedColumn {
                    name: name.clone(),
                    encoding,
                }
            })
            .collect();
        Ok(Self {
            label_column: label_column.to_string(),
            columns,
        })
    }

    pub fn width(&self) -> usize {
        self.columns.iter().map(|c| c.encoding.width()).sum()
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.columns
            .iter()
            .flat_map(|c| match &c.encoding {
                FeatureEncoding::OneHot { levels } => {
                    levels.iter().map(|l| format!("{}={l}", c.name)).collect()
                }
                _ => vec![c.name.clone()],
            })
            .collect()
    }

    /// Encodes a cleaned table into a dense row-major matrix and label indices.
    pub fn transform(&self, table: &RawTable, codec: &LabelCodec) -> Result<EncodedTable> {
        let n = table.row_count();
        let width = self.width();
        let label_col = table
            .column(&self.label_column)
            .ok_or_else(|| Error::Data(format!("label column `{}` missing", self.label_column)))?;
        let labels = (0..n)
            .map(|r| {
                let text = level_text(label_col, r)
                    .ok_or_else(|| Error::Data(format!("row {}: missing label", r + 1)))?;
                codec
                    .encode(&text)
                    .ok_or_else(|| Error::Data(format!("row {}: unknown class `{text}`", r + 1)))
            })
            .collect::<Result<Vec<_>>>()?;

        let mut features = vec![0.0; n * width];
        let mut unseen = 0;
        let mut offset = 0;
        for spec in &self.columns {
            let col = table
                .column(&spec.name)
                .ok_or_else(|| Error::Data(format!("feature column `{}` missing", spec.name)))?;
            match &spec.encoding {
                FeatureEncoding::Numeric => {
                    let Column::Numeric(v) = col else {
                        return Err(Error::Data(format!("column `{}` is not numeric", spec.name)));
                    };
                    for (r, &x) in v.iter().enumerate() {
                        if x.is_nan() {
                            return Err(Error::Data(format!("row {}: `{}` missing", r + 1, spec.name)));
                        }
                        features[r * width + offset] = x;
                    }
                }
                FeatureEncoding::Label { levels } => {
                    for r in 0..n {
                        let text = level_text(col, r);
                        let code = text.as_deref().and_then(|t| levels.iter().position(|l| l == t));
                        features[r * width + offset] = match code {
                            Some(c) => c as f64,
                            None => {
                                unseen += 1;
                                UNSEEN_CODE
                            }
                        };
                    }
                }
                FeatureEncoding::OneHot { levels } => {
                    for r in 0..n {
                        let text = level_text(col, r);
                        match text.as_deref().and_then(|t| levels.iter().position(|l| l == t)) {
                            Some(c) => features[r * width + offset + c] = 1.0,
                            None => unseen += 1,
                        }
                    }
                }
            }
            offset += spec.encoding.width();
        }
        if unseen > 0 {
            warn!("{unseen} cell(s) held categories unseen at fit time");
        }
        Ok(EncodedTable {
            features,
            width,
            labels,
            unseen,
        })
    }
}

fn distinct_levels(col: &Column) -> Vec<String> {
    match col {
        Column::Categorical { levels, codes } => {
            // only levels that still occur, in first-appearance order
            let mut seen = vec![false; levels.len()];
            let mut out = Vec::new();
            for c in codes.iter().flatten() {
                if !seen[*c as usize] {
                    seen[*c as usize] = true;
                    out.push(levels[*c as usize].clone());
                }
            }
            out
        }
        Column::Numeric(v) => {
            let mut out: Vec<String> = Vec::new();
            let mut seen = std::collections::HashSet::new();
            for &x in v.iter().filter(|x| !x.is_nan()) {
                let s = format_number(x);
                if seen.insert(s.clone()) {
                    out.push(s);
                }
            }
            out
        }
    }
}

/// Fits encoders on `table` and encodes it in one go.
pub fn encode_labels_and_categoricals(
    table: &RawTable,
    label_column: &str,
    one_hot: &[String],
    codec: &LabelCodec,
) -> Result<(EncodedTable, FeatureEncoder)> {
    let encoder = FeatureEncoder::fit(table, label_column, one_hot)?;
    let encoded = encoder.transform(table, codec)?;
    Ok((encoded, encoder))
}
