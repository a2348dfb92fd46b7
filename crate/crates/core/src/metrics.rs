//! Confusion matrices, classification reports and training history.
//!
//! Per-class metrics are one-vs-rest: for class `c`, TP counts rows with
//! true and predicted label `c`, FP rows predicted `c` with another true
//! label, FN rows of class `c` predicted otherwise. Any 0/0 ratio is 0.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::LabelCodec;
use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const REPORT_FORMAT: &str = "threathunt-report/1";
pub const HISTORY_HEADER: &str = "epoch,train_loss,train_acc,test_loss,test_acc";

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionCounts {
    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn tp(&self, c: usize) -> u64 {
        self.counts[c][c]
    }

    pub fn fp(&self, c: usize) -> u64 {
        (0..self.num_classes()).filter(|&t| t != c).map(|t| self.counts[t][c]).sum()
    }

    pub fn fn_(&self, c: usize) -> u64 {
        (0..self.num_classes()).filter(|&p| p != c).map(|p| self.counts[c][p]).sum()
    }

    pub fn tn(&self, c: usize) -> u64 {
        self.total() - self.tp(c) - self.fp(c) - self.fn_(c)
    }

    pub fn support(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }
}

/// Counts `(true, predicted)` pairs into a `num_classes × num_classes` matrix.
pub fn confusion(y_true: &[usize], y_pred: &[usize], num_classes: usize) -> Result<ConfusionCounts> {
    if y_true.len() != y_pred.len() {
        return Err(Error::shape("confusion", &[y_true.len()], &[y_pred.len()]));
    }
    let mut counts = vec![vec![0u64; num_classes]; num_classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        for l in [t, p] {
            if l >= num_classes {
                return Err(Error::LabelOutOfRange { label: l, num_classes });
            }
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionCounts { counts })
}

/// Trace over total.
pub fn accuracy(c: &ConfusionCounts) -> Result<f64> {
    match c.total() {
        0 => Err(Error::EmptyDataset("no evaluated rows".into())),
        n => Ok(c.trace() as f64 / n as f64),
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

pub fn precision_recall_f1(c: &ConfusionCounts, class: usize, name: &str) -> ClassMetrics {
    let tp = c.tp(class);
    let precision = ratio(tp, tp + c.fp(class));
    let recall = ratio(tp, tp + c.fn_(class));
    ClassMetrics {
        class: name.to_string(),
        precision,
        recall,
        f1: harmonic(precision, recall),
        support: c.support(class),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub format: String,
    pub classes: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
    pub total: u64,
    pub confusion: ConfusionCounts,
}

impl EvaluationReport {
    pub fn class(&self, name: &str) -> Option<&ClassMetrics> {
        self.classes.iter().find(|c| c.class == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(s)?;
        if r.format != REPORT_FORMAT {
            return Err(Error::Format(format!("unsupported report format `{}`", r.format)));
        }
        Ok(r)
    }

    /// Aligned text table: one row per class, then accuracy, macro and
    /// weighted averages. Values shown to two decimals.
    pub fn to_text(&self) -> String {
        let name_w = self
            .classes
            .iter()
            .map(|c| c.class.len())
            .chain(["weighted avg".len()])
            .max()
            .unwrap_or(12);
        let mut s = String::new();
        let _ = writeln!(s, "{:>name_w$}  {:>9} {:>9} {:>9} {:>9}", "", "precision", "recall", "f1-score", "support");
        let _ = writeln!(s);
        for c in &self.classes {
            let _ = writeln!(
                s,
                "{:>name_w$}  {:>9.2} {:>9.2} {:>9.2} {:>9}",
                c.class, c.precision, c.recall, c.f1, c.support
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "{:>name_w$}  {:>9} {:>9} {:>9.2} {:>9}", "accuracy", "", "", self.accuracy, self.total);
        for (label, a) in [("macro avg", &self.macro_avg), ("weighted avg", &self.weighted_avg)] {
            let _ = writeln!(
                s,
                "{:>name_w$}  {:>9.2} {:>9.2} {:>9.2} {:>9}",
                label, a.precision, a.recall, a.f1, a.support
            );
        }
        s
    }
}

/// Per-class metrics in codec order plus accuracy, macro and weighted means.
pub fn build_report(c: &ConfusionCounts, codec: &LabelCodec) -> EvaluationReport {
    let k = c.num_classes();
    let classes: Vec<ClassMetrics> = (0..k)
        .map(|i| precision_recall_f1(c, i, codec.decode(i).unwrap_or("?")))
        .collect();
    let total = c.total();
    let mean = |f: fn(&ClassMetrics) -> f64| classes.iter().map(f).sum::<f64>() / k as f64;
    let weighted = |f: fn(&ClassMetrics) -> f64| {
        if total == 0 {
            0.0
        } else {
            classes.iter().map(|m| f(m) * m.support as f64).sum::<f64>() / total as f64
        }
    };
    EvaluationReport {
        format: REPORT_FORMAT.to_string(),
        accuracy: accuracy(c).unwrap_or(0.0),
        macro_avg: Averages {
            precision: mean(|m| m.precision),
            recall: mean(|m| m.recall),
            f1: mean(|m| m.f1),
            support: total,
        },
        weighted_avg: Averages {
            precision: weighted(|m| m.precision),
            recall: weighted(|m| m.recall),
            f1: weighted(|m| m.f1),
            support: total,
        },
        classes,
        total,
        confusion: c.clone(),
    }
}

/// Confusion matrix as CSV: a `true\pred` column followed by one column per
/// class.
pub fn confusion_csv(c: &ConfusionCounts, codec: &LabelCodec) -> String {
    let mut s = String::from("true\\pred");
    for name in codec.names() {
        s.push(',');
        s.push_str(name);
    }
    s.push('\n');
    for (i, row) in c.counts.iter().enumerate() {
        s.push_str(codec.decode(i).unwrap_or("?"));
        for v in row {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_loss: Option<f64>,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    /// `epoch,train_loss,train_acc,test_loss,test_acc`; missing test values
    /// are empty cells.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let mut s = format!("{HISTORY_HEADER}\n");
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                e.epoch,
                e.train_loss,
                e.train_accuracy,
                opt(e.test_loss),
                opt(e.test_accuracy)
            );
        }
        s
    }
}

/// Output formats understood by [`emit`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Text,
    ConfusionCsv,
}

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";
pub const CONFUSION_CSV: &str = "confusion.csv";
pub const HISTORY_CSV: &str = "history.csv";

/// Writes the requested report files (and the history CSV when given) into
/// `dir`. Each file is written atomically.
pub fn emit(
    dir: &Path,
    report: &EvaluationReport,
    codec: &LabelCodec,
    history: Option<&TrainingHistory>,
    formats: &[ReportFormat],
) -> Result<()> {
    for f in formats {
        match f {
            ReportFormat::Json => write_atomic(&dir.join(REPORT_JSON), report.to_json()?.as_bytes())?,
            ReportFormat::Text => write_atomic(&dir.join(REPORT_TEXT), report.to_text().as_bytes())?,
            ReportFormat::ConfusionCsv => {
                write_atomic(&dir.join(CONFUSION_CSV), confusion_csv(&report.confusion, codec).as_bytes())?
            }
        }
    }
    if let Some(h) = history {
        write_atomic(&dir.join(HISTORY_CSV), h.to_csv().as_bytes())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions_are_diagonal() {
        let y = vec![0, 1, 1, 3, 14];
        let c = confusion(&y, &y, 15).unwrap();
        for i in 0..15 {
            for j in 0..15 {
                if i != j {
                    assert_eq!(c.counts[i][j], 0);
                }
            }
        }
        assert_eq!(c.support(1), 2);
        assert_eq!(accuracy(&c).unwrap(), 1.0);
    }

    #[test]
    fn single_off_diagonal_pair() {
        let c = confusion(&[3], &[5], 15).unwrap();
        assert_eq!(c.counts[3][5], 1);
        assert_eq!(c.total(), 1);
        assert_eq!(c.trace(), 0);
    }

    #[test]
    fn out_of_range_label() {
        assert!(confusion(&[15], &[0], 15).is_err());
        assert!(confusion(&[0], &[0, 1], 15).is_err());
        assert!(accuracy(&confusion(&[], &[], 15).unwrap()).is_err());
    }

    #[test]
    fn accuracy_95_of_100() {
        let t: Vec<usize> = vec![0; 100];
        let mut p = t.clone();
        p[..5].iter_mut().for_each(|v| *v = 1);
        assert!((accuracy(&confusion(&t, &p, 15).unwrap()).unwrap() - 0.95).abs() < 1e-15);
    }

    #[test]
    fn precision_half_recall_one() {
        // class 0: TP=5, FP=5, FN=0
        let mut t = vec![0; 5];
        t.extend(vec![1; 5]);
        let p = vec![0; 10];
        let c = confusion(&t, &p, 15).unwrap();
        let m = precision_recall_f1(&c, 0, "Normal");
        assert_eq!(m.precision, 0.5);
        assert_eq!(m.recall, 1.0);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
        let absent = precision_recall_f1(&c, 7, "Uploading");
        assert_eq!((absent.precision, absent.recall, absent.f1, absent.support), (0.0, 0.0, 0.0, 0));
    }

    #[test]
    fn symmetric_errors_macro_equals_weighted() {
        let codec = LabelCodec::new(vec!["a".into(), "b".into()]).unwrap();
        let t = vec![0, 0, 0, 0, 1, 1, 1, 1];
        let p = vec![0, 0, 0, 1, 1, 1, 1, 0];
        let r = build_report(&confusion(&t, &p, 2).unwrap(), &codec);
        assert!((r.macro_avg.f1 - r.weighted_avg.f1).abs() < 1e-15);
        assert!((r.macro_avg.precision - r.weighted_avg.precision).abs() < 1e-15);
    }

    #[test]
    fn text_and_csv_layout() {
        let codec = LabelCodec::edge_iiot();
        let c = confusion(&[0, 3, 6], &[0, 3, 0], 15).unwrap();
        let r = build_report(&c, &codec);
        let text = r.to_text();
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        assert_eq!(lines.len(), 1 + 15 + 3);
        assert!(lines[1].trim_start().starts_with("Normal"));
        assert!(lines.last().unwrap().trim_start().starts_with("weighted avg"));
        let csv = confusion_csv(&c, &codec);
        assert_eq!(csv.lines().next().unwrap().split(',').count(), 16);
        assert_eq!(csv.lines().count(), 16);
        let back = EvaluationReport::from_json(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn history_csv_rows() {
        let h = TrainingHistory {
            epochs: (1..=3)
                .map(|e| EpochRecord {
                    epoch: e,
                    train_loss: 0.1,
                    train_accuracy: 0.9,
                    test_loss: None,
                    test_accuracy: Some(0.5),
                })
                .collect(),
        };
        let csv = h.to_csv();
        assert_eq!(csv.lines().count(), 4);
        assert_eq!(csv.lines().nth(1).unwrap(), "1,0.1,0.9,,0.5");
    }
}
