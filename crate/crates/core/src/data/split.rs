//! Stratified train/test partitioning and subsampling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

use super::LabelCodec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub stratified: bool,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            test_fraction: 0.2,
            stratified: true,
            seed: 42,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!(
                "test_fraction {} outside (0, 1)",
                self.test_fraction
            )));
        }
        Ok(())
    }
}

fn class_rows(labels: &[usize], num_classes: usize) -> Vec<Vec<usize>> {
    let mut by_class = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    by_class
}

/// Row indices `(train, test)`, each sorted ascending.
///
/// Stratified: every class with `n` rows contributes `round(n·f)` test rows,
/// clamped to `1..=n-1`; classes must have at least 2 rows.
pub fn split_indices(labels: &[usize], codec: &LabelCodec, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    spec.validate()?;
    if let Some(&bad) = labels.iter().find(|&&l| l >= codec.len()) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            num_classes: codec.len(),
        });
    }
    let mut rng = SeededRng::new(spec.seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    if spec.stratified {
        for (class, mut rows) in class_rows(labels, codec.len()).into_iter().enumerate() {
            let n = rows.len();
            if n == 0 {
                continue;
            }
            if n < 2 {
                return Err(Error::TooFewRows {
                    class: codec.decode(class).unwrap_or("?").to_string(),
                    count: n,
                    needed: 2,
                });
            }
            rng.shuffle(&mut rows);
            let k = ((n as f64 * spec.test_fraction).round() as usize).clamp(1, n - 1);
            test.extend_from_slice(&rows[..k]);
            train.extend_from_slice(&rows[k..]);
        }
    } else {
        let mut rows: Vec<usize> = (0..labels.len()).collect();
        rng.shuffle(&mut rows);
        let k = (labels.len() as f64 * spec.test_fraction).round() as usize;
        test.extend_from_slice(&rows[..k]);
        train.extend_from_slice(&rows[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Keeps `round(n·fraction)` rows of each class (at least `min(2, n)`),
/// sorted ascending.
pub fn stratified_subsample(labels: &[usize], num_classes: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("subsample fraction {fraction} outside (0, 1]")));
    }
    let mut rng = SeededRng::derived(seed, 0x5ab5);
    let mut keep = Vec::new();
    for mut rows in class_rows(labels, num_classes) {
        let n = rows.len();
        if n == 0 {
            continue;
        }
        rng.shuffle(&mut rows);
        let k = ((n as f64 * fraction).round() as usize).max(n.min(2)).min(n);
        keep.extend_from_slice(&rows[..k]);
    }
    keep.sort_unstable();
    Ok(keep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn balanced_two_class_split() {
        let labels: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let (train, test) = split_indices(&labels, &LabelCodec::edge_iiot(), &SplitSpec::default()).unwrap();
        assert_eq!(test.len(), 20);
        assert_eq!(test.iter().filter(|&&i| labels[i] == 0).count(), 10);
        assert_eq!(train.len(), 80);
    }

    #[test]
    fn singleton_class_is_error_naming_class() {
        let labels = vec![0, 0, 0, 13];
        let err = split_indices(&labels, &LabelCodec::edge_iiot(), &SplitSpec::default()).unwrap_err();
        assert!(err.to_string().contains("MITM"), "{err}");
    }

    #[test]
    fn bad_fraction_rejected() {
        let spec = SplitSpec { test_fraction: 1.0, ..SplitSpec::default() };
        assert!(split_indices(&[0, 0], &LabelCodec::edge_iiot(), &spec).is_err());
    }

    proptest! {
        #[test]
        fn split_is_a_stratified_partition(
            labels in proptest::collection::vec(0usize..4, 2..300),
            frac in 0.05f64..0.95,
            seed in any::<u64>(),
        ) {
            let mut labels = labels;
            // every present class needs two rows
            let present: Vec<usize> = (0..4).filter(|c| labels.contains(c)).collect();
            labels.extend(present.iter().copied());
            let spec = SplitSpec { test_fraction: frac, stratified: true, seed };
            let (train, test) = split_indices(&labels, &LabelCodec::edge_iiot(), &spec).unwrap();
            let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
            for c in present {
                let n = labels.iter().filter(|&&l| l == c).count() as f64;
                let t = test.iter().filter(|&&i| labels[i] == c).count() as f64;
                prop_assert!((t - n * frac).abs() <= 1.0, "class {c}: {t} of {n}");
            }
        }
    }
}
