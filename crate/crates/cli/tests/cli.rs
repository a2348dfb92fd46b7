use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use threathunt_core::data::Bundle;
use threathunt_core::metrics::EvaluationReport;
use threathunt_core::synthetic::{write_edge_iiot_csv, SyntheticSpec};

const SMALL_MODEL: &str = r#"
seed = 5

[model]
head_size = 4
num_heads = 1
filters = 4
num_blocks = 1
mlp_units = [8]
batch_size = 32
epochs = 1

[gan]
steps = 20
batch_size = 16
latent_dim = 8
gen_hidden = [16]
disc_hidden = [16]
"#;

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new(rows_per_class: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        write_edge_iiot_csv(&dir.path().join("edge.csv"), &SyntheticSpec::uniform(rows_per_class, 3)).unwrap();
        std::fs::write(dir.path().join("run.toml"), SMALL_MODEL).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        let config = self.path("run.toml");
        Command::new(env!("CARGO_BIN_EXE_threathunt"))
            .current_dir(self.dir.path())
            .arg("--config")
            .arg(&config)
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> Output {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        out
    }

    fn preprocess(&self, out: &str) {
        self.ok(&["preprocess", "--input", "edge.csv", "--out", out]);
    }
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn files_equal(a: &Path, b: &Path) -> bool {
    std::fs::read(a).unwrap() == std::fs::read(b).unwrap()
}

#[test]
fn missing_input_exits_2_and_names_path() {
    let ws = Workspace::new(2);
    let out = ws.run(&["preprocess", "--input", "absent.csv", "--out", "bundle"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("absent.csv"), "{}", stderr(&out));
    assert!(!ws.path("bundle").exists());
}

#[test]
fn usage_errors_exit_2() {
    let ws = Workspace::new(2);
    assert_eq!(ws.run(&["train", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(ws.run(&["train", "--epochs", "many"]).status.code(), Some(2));
    std::fs::write(ws.path("bad.toml"), "[model]\nunknown = 1\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_threathunt"))
        .args(["--config", ws.path("bad.toml").to_str().unwrap(), "show-config"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn preprocess_records_width_and_is_reproducible() {
    let ws = Workspace::new(10);
    ws.preprocess("a");
    ws.preprocess("b");
    let bundle = Bundle::read(&ws.path("a")).unwrap();
    assert_eq!(bundle.manifest.feature_width, 95);
    for entry in std::fs::read_dir(ws.path("a")).unwrap() {
        let name = entry.unwrap().file_name();
        assert!(files_equal(&ws.path("a").join(&name), &ws.path("b").join(&name)), "{name:?}");
    }
}

#[test]
fn train_then_evaluate() {
    let ws = Workspace::new(12);
    ws.preprocess("bundle");
    for run in ["one", "two"] {
        ws.ok(&[
            "train",
            "--bundle",
            "bundle",
            "--checkpoint",
            &format!("{run}/model.json"),
            "--history",
            &format!("{run}/history.csv"),
        ]);
    }
    assert!(files_equal(&ws.path("one/history.csv"), &ws.path("two/history.csv")));
    assert!(files_equal(&ws.path("one/model.json"), &ws.path("two/model.json")));
    let history = std::fs::read_to_string(ws.path("one/history.csv")).unwrap();
    assert_eq!(history.lines().count(), 2);

    let out = ws.ok(&["evaluate", "--bundle", "bundle", "--checkpoint", "one/model.json", "--out", "report"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("weighted avg"));
    let report = EvaluationReport::from_json(&std::fs::read_to_string(ws.path("report/report.json")).unwrap()).unwrap();
    assert_eq!(report.classes.len(), 15);
    let csv = std::fs::read_to_string(ws.path("report/confusion.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap().split(',').count(), 16);
    assert!(ws.path("report/report.txt").exists());
}

#[test]
fn checkpoint_bundle_mismatch_is_reported() {
    let ws = Workspace::new(12);
    ws.preprocess("bundle");
    ws.ok(&["train", "--bundle", "bundle", "--checkpoint", "model.json", "--history", "h.csv"]);
    ws.ok(&["--seed", "99", "preprocess", "--input", "edge.csv", "--out", "other"]);
    let out = ws.run(&["evaluate", "--bundle", "other", "--checkpoint", "model.json", "--out", "report"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("threathunt-checkpoint/1"), "{}", stderr(&out));
    assert!(!ws.path("report").exists());
}

#[test]
fn failed_train_leaves_no_artifacts() {
    let ws = Workspace::new(4);
    ws.preprocess("bundle");
    std::fs::write(ws.path("blocker"), "not a directory").unwrap();
    let out = ws.run(&["train", "--bundle", "bundle", "--checkpoint", "blocker/model.json", "--history", "h.csv"]);
    assert_ne!(out.status.code(), Some(0));
    assert!(!ws.path("h.csv").exists());
}

#[test]
fn augment_counts_and_provenance() {
    let ws = Workspace::new(80);
    ws.preprocess("bundle");
    let before = Bundle::read(&ws.path("bundle")).unwrap();

    ws.ok(&["augment", "--bundle", "bundle", "--out", "same", "--factor", "1"]);
    let same = Bundle::read(&ws.path("same")).unwrap();
    assert_eq!(same.train, before.train);

    ws.ok(&["augment", "--bundle", "bundle", "--out", "aug", "--classes", "MITM", "--factor", "2"]);
    let aug = Bundle::read(&ws.path("aug")).unwrap();
    let mitm = before.manifest.codec.encode("MITM").unwrap();
    let mut want = before.train.class_counts();
    want[mitm] *= 2;
    assert_eq!(aug.train.class_counts(), want);
    assert_eq!(&aug.train.features[..before.train.features.len()], &before.train.features[..]);
    let prov: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ws.path("aug/provenance.json")).unwrap()).unwrap();
    let records = prov["records"].as_array().unwrap();
    assert_eq!(records.len(), 1);
    assert_eq!(records[0]["class_name"], "MITM");
    assert_eq!(records[0]["rows"].as_u64().unwrap() as usize, want[mitm] / 2);
    assert!(records[0]["seed"].is_u64() && records[0]["steps"].as_u64() == Some(20));
}

#[test]
fn augment_refuses_tiny_classes_but_continues() {
    let ws = Workspace::new(20);
    ws.preprocess("bundle");
    let out = ws.ok(&["-v", "augment", "--bundle", "bundle", "--out", "aug", "--classes", "MITM", "--factor", "3"]);
    assert!(stderr(&out).contains("MITM"), "{}", stderr(&out));
    let aug = Bundle::read(&ws.path("aug")).unwrap();
    assert_eq!(aug.manifest.augmentation.unwrap().refusals.len(), 1);
}

#[test]
fn gradcheck_passes_and_catches_faults() {
    let ws = Workspace::new(1);
    let out = ws.ok(&["gradcheck", "--json", "grad.json"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("13 of 13 cases passed"));
    assert!(ws.path("grad.json").exists());
    let bad = ws.run(&["gradcheck", "--inject-fault", "softmax"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL"));
}
