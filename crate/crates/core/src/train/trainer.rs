use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::data::{oracle_table, Dataset, SyntheticSample};
use super::dropout::Dropout;
use super::optim::{adam_step, lr_at, AdamState};
use crate::checkpoint;
use crate::error::{DcnError, Result};
use crate::model::{argmax, Dcn};
use crate::tensor::Tensor;

/// One line of the metric log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricRow {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub accuracy: f64,
}

pub const METRIC_HEADER: &str = "epoch,step,lr,loss,accuracy";

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from(METRIC_HEADER);
    out.push('\n');
    for r in rows {
        // `{:?}` prints the shortest round-tripping form of an f64.
        let _ = writeln!(out, "{},{},{:?},{:?},{:?}", r.epoch, r.step, r.lr, r.loss, r.accuracy);
    }
    out
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub log: Vec<MetricRow>,
    pub best_accuracy: f64,
    pub best_epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassStats {
    pub class: usize,
    pub correct: usize,
    pub total: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub per_class: Vec<ClassStats>,
}

/// Exact-match accuracy with a per-class breakdown over the true class.
pub fn score_predictions(predicted: &[usize], truth: &[usize], n_classes: usize) -> Result<EvalReport> {
    if truth.is_empty() {
        return Err(DcnError::Input("cannot evaluate an empty dataset".into()));
    }
    if predicted.len() != truth.len() {
        return Err(DcnError::Input(format!(
            "{} predictions for {} samples",
            predicted.len(),
            truth.len()
        )));
    }
    let mut per_class: Vec<ClassStats> = (0..n_classes)
        .map(|class| ClassStats {
            class,
            correct: 0,
            total: 0,
        })
        .collect();
    let mut correct = 0;
    for (&p, &t) in predicted.iter().zip(truth) {
        let slot = per_class
            .get_mut(t)
            .ok_or_else(|| DcnError::Input(format!("class {t} outside {n_classes} classes")))?;
        slot.total += 1;
        if p == t {
            slot.correct += 1;
            correct += 1;
        }
    }
    Ok(EvalReport {
        accuracy: correct as f64 / truth.len() as f64,
        correct,
        total: truth.len(),
        per_class,
    })
}

/// Argmax answer for every sample, computed in parallel.
pub fn predict_all(model: &Dcn, data: &Dataset, samples: &[SyntheticSample]) -> Result<Vec<usize>> {
    samples
        .par_iter()
        .map(|s| Ok(argmax(&model.predict(&data.example(s)?)?)))
        .collect()
}

pub fn evaluate(model: &Dcn, data: &Dataset, samples: &[SyntheticSample]) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(DcnError::Input("cannot evaluate an empty dataset".into()));
    }
    let truth = oracle_table(samples, &data.vocab)?;
    let predicted = predict_all(model, data, samples)?;
    score_predictions(&predicted, &truth, model.config().n_attributes)
}

fn mix(a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over the combined words.
    let mut z = a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_add(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn dump_batch(out: Option<&Path>, epoch: usize, step: usize, batch: &[&SyntheticSample]) -> String {
    let Some(dir) = out else {
        return "no output directory for the batch dump".into();
    };
    let path = dir.join(format!("nonfinite_batch_e{epoch}_s{step}.json"));
    match serde_json::to_string_pretty(batch)
        .map_err(DcnError::from)
        .and_then(|text| fs::write(&path, text).map_err(DcnError::from))
    {
        Ok(()) => format!("offending batch written to {}", path.display()),
        Err(e) => format!("could not dump offending batch: {e}"),
    }
}

/// Mini-batch Adam on the training split. Per-sample gradients are computed
/// concurrently and reduced in index order, so the run is a pure function of
/// the config. After every epoch the test split is scored; the best model is
/// kept in `model` and, when `out` is given, written to `out/checkpoint`
/// together with `out/metrics.csv`.
pub fn train_loop(model: &mut Dcn, data: &Dataset, out: Option<&Path>) -> Result<TrainOutcome> {
    let cfg = model.config().train.clone();
    if data.train.is_empty() {
        return Err(DcnError::Input("training split is empty".into()));
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
    }
    let n = data.train.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let mut state = AdamState::new(model.params());
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = Vec::with_capacity(cfg.max_epochs);
    let mut best: Option<(f64, usize, Vec<Tensor>)> = None;
    let mut step = 0usize;

    for epoch in 0..cfg.max_epochs {
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, epoch as u64));
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let lr = lr_at(step as f64 / steps_per_epoch as f64, &cfg);
            let results: Vec<Result<(f64, Vec<Tensor>)>> = batch
                .par_iter()
                .enumerate()
                .map(|(slot, &i)| {
                    let sample = &data.train[i];
                    let ex = data.example(sample)?;
                    let seed = mix(mix(cfg.seed, step as u64), slot as u64);
                    let mut drop = Dropout::train(seed, cfg.dropout_fc, cfg.dropout_lstm);
                    model.loss_and_grads(&ex, sample.answer, &mut drop)
                })
                .collect();
            let mut batch_loss = 0.0;
            let mut total: Option<Vec<Tensor>> = None;
            for r in results {
                let (loss, grads) = r?;
                batch_loss += loss;
                match total.as_mut() {
                    None => total = Some(grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                                *x += y;
                            }
                        }
                    }
                }
            }
            let mut grads = total.expect("nonempty batch");
            let inv = 1.0 / batch.len() as f64;
            for g in &mut grads {
                g.data_mut().iter_mut().for_each(|x| *x *= inv);
            }
            if !batch_loss.is_finite() || !grads.iter().all(Tensor::is_finite) {
                let samples: Vec<&SyntheticSample> = batch.iter().map(|&i| &data.train[i]).collect();
                let note = dump_batch(out, epoch + 1, step, &samples);
                return Err(DcnError::Numerical(format!(
                    "non-finite loss or gradient at epoch {} step {step} (samples {batch:?}); {note}",
                    epoch + 1
                )));
            }
            adam_step(model.params_mut(), &grads, &mut state, lr, &cfg)?;
            loss_sum += batch_loss;
            step += 1;
        }
        let report = evaluate(model, data, &data.test)?;
        let row = MetricRow {
            epoch: epoch + 1,
            step,
            lr: lr_at(step as f64 / steps_per_epoch as f64, &cfg),
            loss: loss_sum / n as f64,
            accuracy: report.accuracy,
        };
        log.push(row);
        if best.as_ref().is_none_or(|(acc, _, _)| report.accuracy > *acc) {
            best = Some((report.accuracy, epoch + 1, model.params().to_vec()));
            if let Some(dir) = out {
                checkpoint::save(model, dir.join("checkpoint"))?;
            }
        }
        if let Some(dir) = out {
            fs::write(dir.join("metrics.csv"), metrics_csv(&log))?;
        }
    }
    let (best_accuracy, best_epoch, params) = best.expect("at least one epoch");
    model.set_params(params)?;
    Ok(TrainOutcome {
        log,
        best_accuracy,
        best_epoch,
    })
}
