//! One function per subcommand.

use std::path::Path;

use anyhow::{bail, Context, Result};
use log::{info, warn};
use serde::Serialize;
use threathunt_core::data::{preprocess, Bundle};
use threathunt_core::gan::{augment_dataset, Provenance, Refusal};
use threathunt_core::gradcheck::{run_suite, GradcheckSummary};
use threathunt_core::io::write_atomic;
use threathunt_core::metrics::{build_report, confusion, emit, ReportFormat};
use threathunt_core::model::checkpoint::Checkpoint;
use threathunt_core::model::{evaluate_loss_accuracy, train};
use threathunt_core::tape::Fault;
use threathunt_core::{Classifier, EvaluationReport, SeededRng, TrainingHistory};

use crate::config::RunConfig;
use crate::InputError;

/// Streams of the run seed used by each seeded step.
const INIT_STREAM: u64 = 10;
const TRAIN_STREAM: u64 = 11;

pub const PROVENANCE_FILE: &str = "provenance.json";

pub fn cmd_preprocess(cfg: &RunConfig) -> Result<Bundle> {
    let Some(csv) = &cfg.paths.raw_csv else {
        return Err(InputError("no input CSV given (--input or paths.raw_csv)".into()).into());
    };
    let bundle = preprocess(csv, &cfg.preprocess()?)?;
    bundle
        .write(&cfg.paths.bundle_dir)
        .with_context(|| format!("writing bundle {}", cfg.paths.bundle_dir.display()))?;
    let m = &bundle.manifest;
    info!(
        "{} rows → {} after cleaning → {} train / {} test, {} features; bundle at {}",
        m.source_rows,
        m.cleaned_rows,
        m.train.rows,
        m.test.rows,
        m.feature_width,
        cfg.paths.bundle_dir.display()
    );
    Ok(bundle)
}

#[derive(Debug, Serialize)]
struct ProvenanceSidecar<'a> {
    source_bundle: String,
    records: &'a [Provenance],
    refusals: &'a [Refusal],
}

pub fn cmd_augment(cfg: &RunConfig) -> Result<Bundle> {
    let mut bundle = read_bundle(&cfg.paths.bundle_dir)?;
    let counts = bundle.train.class_counts();
    let targets = cfg.augment.resolve(&bundle.manifest.codec, &counts)?;
    let (train, summary) = augment_dataset(&bundle.train, &targets, &cfg.gan())?;
    for r in &summary.refusals {
        warn!(
            "{} left at {} rows: at least {} real rows are needed to train its GAN",
            r.class_name, r.real_rows, r.needed
        );
    }
    for (c, (&after, &want)) in summary.counts_after.iter().zip(&targets).enumerate() {
        let refused = summary.refusals.iter().any(|r| r.class == c);
        if !refused && after != want {
            bail!("count audit failed for class {c}: {after} rows, target {want}");
        }
    }
    let sidecar = serde_json::to_vec_pretty(&ProvenanceSidecar {
        source_bundle: cfg.paths.bundle_dir.display().to_string(),
        records: &summary.records,
        refusals: &summary.refusals,
    })?;
    bundle.train = train;
    bundle.manifest.augmentation = Some(summary);
    bundle.refresh_counts();
    bundle
        .write_with(&cfg.paths.augmented_dir, &[(PROVENANCE_FILE, sidecar)])
        .with_context(|| format!("writing bundle {}", cfg.paths.augmented_dir.display()))?;
    info!("augmented bundle at {}", cfg.paths.augmented_dir.display());
    Ok(bundle)
}

pub fn cmd_train(cfg: &RunConfig) -> Result<(Checkpoint, TrainingHistory)> {
    let bundle = read_bundle(&cfg.paths.bundle_dir)?;
    let model_cfg = cfg.model.clone();
    if bundle.manifest.codec.len() != model_cfg.num_classes {
        return Err(InputError(format!(
            "bundle has {} classes, model is configured for {}",
            bundle.manifest.codec.len(),
            model_cfg.num_classes
        ))
        .into());
    }
    let mut model = Classifier::new(model_cfg, &mut SeededRng::derived(cfg.seed, INIT_STREAM))?;
    info!("training {} parameters on {} rows", model.num_parameters(), bundle.train.len());
    let test = (!bundle.test.is_empty()).then_some(&bundle.test);
    let history = train(&mut model, &bundle.train, test, &mut SeededRng::derived(cfg.seed, TRAIN_STREAM))?;
    let ck = Checkpoint::new(model, bundle.manifest.codec.clone(), bundle.manifest.stats.clone(), cfg.seed);
    ck.save(&cfg.paths.checkpoint)?;
    write_atomic(&cfg.paths.history, history.to_csv().as_bytes())?;
    info!(
        "checkpoint at {}, history at {}",
        cfg.paths.checkpoint.display(),
        cfg.paths.history.display()
    );
    Ok((ck, history))
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<EvaluationReport> {
    let bundle = read_bundle(&cfg.paths.bundle_dir)?;
    let ck = Checkpoint::load(&cfg.paths.checkpoint)?;
    ck.check_compatible(&bundle.manifest.codec, &bundle.manifest.stats)
        .with_context(|| format!("{} does not match {}", cfg.paths.checkpoint.display(), cfg.paths.bundle_dir.display()))?;
    let (loss, _, preds) = evaluate_loss_accuracy(&ck.model, &bundle.test)?;
    let counts = confusion(&bundle.test.labels, &preds, ck.codec.len())?;
    let report = build_report(&counts, &ck.codec);
    emit(
        &cfg.paths.report_dir,
        &report,
        &ck.codec,
        None,
        &[ReportFormat::Json, ReportFormat::Text, ReportFormat::ConfusionCsv],
    )?;
    info!(
        "test loss {loss:.4}, accuracy {:.4}; reports in {}",
        report.accuracy,
        cfg.paths.report_dir.display()
    );
    Ok(report)
}

pub fn cmd_gradcheck(cfg: &RunConfig, fault: Option<Fault>, json: Option<&Path>) -> Result<GradcheckSummary> {
    let summary = run_suite(cfg.seed, fault)?;
    if let Some(p) = json {
        write_atomic(p, &serde_json::to_vec_pretty(&summary)?)?;
    }
    Ok(summary)
}

fn read_bundle(dir: &Path) -> Result<Bundle> {
    Bundle::read(dir).with_context(|| format!("reading bundle {}", dir.display()))
}
