//! Mini-batch training with Adam.

use log::info;
use rayon::prelude::*;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::metrics::{EpochRecord, TrainingHistory};
use crate::optim::Adam;
use crate::rng::SeededRng;
use crate::tape::{Tape, PROB_FLOOR};

use super::{argmax_rows, Classifier, CHUNK_ROWS};

struct ChunkOutcome {
    grads: Vec<Vec<f64>>,
    loss_sum: f64,
    correct: usize,
}

/// Trains `model` for `model.config.epochs` epochs of shuffled mini-batches.
///
/// Training loss and accuracy are averaged over the batches of each epoch
/// (dropout active); test metrics are computed in eval mode after the epoch.
pub fn train(
    model: &mut Classifier,
    train_set: &LabeledDataset,
    test_set: Option<&LabeledDataset>,
    rng: &mut SeededRng,
) -> Result<TrainingHistory> {
    if train_set.is_empty() {
        return Err(Error::EmptyDataset("training set".into()));
    }
    if train_set.width() != model.config.row_width() {
        return Err(Error::FeatureWidth {
            expected: model.config.row_width(),
            got: train_set.width(),
        });
    }
    let cfg = model.config.clone();
    let mut adam = Adam::new(cfg.adam());
    let mut history = TrainingHistory::default();
    let n = train_set.len();

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for batch in order.chunks(cfg.batch_size) {
            let batch_seed = rng.next_u64();
            let (grads, l, c) = batch_gradients(model, train_set, batch, batch_seed)?;
            loss_sum += l;
            correct += c;
            for ((_, p), g) in model.params.visit_mut().into_iter().zip(&grads) {
                p.accumulate_grad(g)?;
            }
            adam.step(model.params.visit_mut())?;
        }
        let (test_loss, test_accuracy) = match test_set {
            Some(t) if !t.is_empty() => {
                let (l, a, _) = evaluate_loss_accuracy(model, t)?;
                (Some(l), Some(a))
            }
            _ => (None, None),
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / n as f64,
            train_accuracy: correct as f64 / n as f64,
            test_loss,
            test_accuracy,
        };
        info!(
            "epoch {epoch}: train loss {:.4} acc {:.4} | test loss {} acc {}",
            record.train_loss,
            record.train_accuracy,
            fmt_opt(record.test_loss),
            fmt_opt(record.test_accuracy)
        );
        history.epochs.push(record);
    }
    Ok(history)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

/// Gradient of the batch-mean cross-entropy, plus the summed per-row loss
/// and the number of correct predictions.
fn batch_gradients(
    model: &Classifier,
    data: &LabeledDataset,
    batch: &[usize],
    batch_seed: u64,
) -> Result<(Vec<Vec<f64>>, f64, usize)> {
    let total = batch.len() as f64;
    let outcomes: Vec<Result<ChunkOutcome>> = batch
        .par_chunks(CHUNK_ROWS)
        .enumerate()
        .map(|(ci, idx)| {
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape);
            let rows: Vec<&[f64]> = idx.iter().map(|&i| data.row(i)).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
            let mut rng = SeededRng::derived(batch_seed, ci as u64);
            let probs = model.forward_on_tape(&mut tape, &bound, &rows, true, &mut rng)?;
            let preds = argmax_rows(tape.value(probs).data(), model.config.num_classes);
            let correct = preds.iter().zip(&labels).filter(|(p, l)| p == l).count();
            let ce = tape.cross_entropy(probs, &labels)?;
            let loss_sum = tape.value(ce).item() * idx.len() as f64;
            let loss = tape.scale(ce, idx.len() as f64 / total)?;
            tape.backward(loss)?;
            let grads = bound
                .visit()
                .into_iter()
                .map(|(_, v)| {
                    tape.grad(*v)
                        .map(<[f64]>::to_vec)
                        .unwrap_or_else(|| vec![0.0; tape.value(*v).len()])
                })
                .collect();
            Ok(ChunkOutcome {
                grads,
                loss_sum,
                correct,
            })
        })
        .collect();

    let mut grads: Option<Vec<Vec<f64>>> = None;
    let mut loss_sum = 0.0;
    let mut correct = 0;
    for outcome in outcomes {
        let o = outcome?;
        loss_sum += o.loss_sum;
        correct += o.correct;
        match &mut grads {
            None => grads = Some(o.grads),
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(&o.grads) {
                    a.iter_mut().zip(g).for_each(|(a, g)| *a += g);
                }
            }
        }
    }
    Ok((grads.unwrap_or_default(), loss_sum, correct))
}

/// Eval-mode mean cross-entropy, accuracy and predictions over a dataset.
pub fn evaluate_loss_accuracy(model: &Classifier, data: &LabeledDataset) -> Result<(f64, f64, Vec<usize>)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("evaluation set".into()));
    }
    let rows: Vec<&[f64]> = (0..data.len()).map(|i| data.row(i)).collect();
    let k = model.config.num_classes;
    let probs = model.probabilities(&rows)?;
    let preds = argmax_rows(&probs, k);
    let mut loss = 0.0;
    let mut correct = 0;
    for (i, (&label, &pred)) in data.labels.iter().zip(&preds).enumerate() {
        if label >= k {
            return Err(Error::LabelOutOfRange { label, num_classes: k });
        }
        loss -= probs[i * k + label].max(PROB_FLOOR).ln();
        correct += usize::from(label == pred);
    }
    let n = data.len() as f64;
    Ok((loss / n, correct as f64 / n, preds))
}
