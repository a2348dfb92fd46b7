use std::path::Path;

use threathunt_core::data::{preprocess, Bundle, PreprocessConfig, EDGE_IIOT_CLASSES};
use threathunt_core::synthetic::{write_edge_iiot_csv, SyntheticSpec};
use threathunt_core::{Error, StandardizationStats, FEATURE_DIM};

fn synthetic_csv(dir: &Path, rows: usize, seed: u64) -> std::path::PathBuf {
    let path = dir.join("edge.csv");
    let spec = SyntheticSpec {
        missing_rate: 0.01,
        duplicate_rate: 0.05,
        ..SyntheticSpec::uniform(rows, seed)
    };
    write_edge_iiot_csv(&path, &spec).unwrap();
    path
}

#[test]
fn edge_schema_encodes_to_95_features() {
    let dir = tempfile::tempdir().unwrap();
    let csv = synthetic_csv(dir.path(), 40, 1);
    let bundle = preprocess(&csv, &PreprocessConfig::default()).unwrap();
    let m = &bundle.manifest;
    assert_eq!(m.feature_width, FEATURE_DIM);
    assert_eq!(m.feature_names.len(), FEATURE_DIM);
    assert!(m.cleaned_rows < m.source_rows, "duplicates removed");
    assert_eq!(m.train.rows + m.test.rows, m.cleaned_rows);
    assert_eq!(bundle.train.width(), FEATURE_DIM);
    assert!(!m.feature_names.iter().any(|n| n.starts_with("Attack_")));
}

#[test]
fn split_is_stratified_and_standardized_on_train() {
    let dir = tempfile::tempdir().unwrap();
    let csv = synthetic_csv(dir.path(), 50, 2);
    let bundle = preprocess(&csv, &PreprocessConfig::default()).unwrap();
    let train = bundle.train.class_counts();
    let test = bundle.test.class_counts();
    for c in 0..EDGE_IIOT_CLASSES.len() {
        let frac = test[c] as f64 / (train[c] + test[c]) as f64;
        assert!((frac - 0.2).abs() < 0.03, "class {c}: {frac}");
    }
    let refit = StandardizationStats::fit(&bundle.train.features, bundle.train.width());
    for (j, m) in refit.mean.iter().enumerate() {
        assert!(m.abs() < 1e-9, "feature {j} mean {m}");
    }
}

#[test]
fn bundle_round_trips_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let csv = synthetic_csv(dir.path(), 20, 3);
    let cfg = PreprocessConfig::default();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    preprocess(&csv, &cfg).unwrap().write(&a).unwrap();
    preprocess(&csv, &cfg).unwrap().write(&b).unwrap();
    let mut names: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 7);
    for n in &names {
        assert_eq!(std::fs::read(a.join(n)).unwrap(), std::fs::read(b.join(n)).unwrap(), "{n:?}");
    }
    let back = Bundle::read(&a).unwrap();
    assert_eq!(back, preprocess(&csv, &cfg).unwrap());
}

#[test]
fn subsample_keeps_class_proportions() {
    let dir = tempfile::tempdir().unwrap();
    let csv = synthetic_csv(dir.path(), 60, 4);
    let full = preprocess(&csv, &PreprocessConfig::default()).unwrap();
    let cfg = PreprocessConfig {
        subsample_fraction: Some(0.5),
        ..PreprocessConfig::default()
    };
    let half = preprocess(&csv, &cfg).unwrap();
    let total = |b: &Bundle| b.manifest.train.rows + b.manifest.test.rows;
    let ratio = total(&half) as f64 / total(&full) as f64;
    assert!((ratio - 0.5).abs() < 0.02, "{ratio}");
}

#[test]
fn missing_input_names_the_path() {
    let err = preprocess(Path::new("/nonexistent/edge.csv"), &PreprocessConfig::default()).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert!(err.is_input_error());
    assert!(err.to_string().contains("/nonexistent/edge.csv"));
}

#[test]
fn ragged_row_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "a,b,Attack_type\n1,2,Normal\n3,Normal\n").unwrap();
    let err = preprocess(&path, &PreprocessConfig::default()).unwrap_err().to_string();
    assert!(err.contains("bad.csv") && err.contains('3'), "{err}");
}
