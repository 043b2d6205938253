//! The training loop: data loading, batched surrogate-gradient descent,
//! per-epoch evaluation, history, and checkpointing.
//!
//! Determinism contract: a run is a pure function of the config. Batch order
//! for epoch `e` comes from a stateless shuffle seeded by `(seed, e)`, so a
//! resumed run replays exactly the batches the uninterrupted run would have
//! seen and lands on bitwise-identical parameters.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use rand::seq::SliceRandom;

use super::adam::Adam;
use super::checkpoint::{config_digest, load_checkpoint, restore_into, save_checkpoint, snapshot};
use super::metrics::{metrics_from_confusion, EvalMetrics};
use super::{TrainConfig, TrainError};
use crate::csi::{normalize_mean_subtract, DatasetManifest, Split};
use crate::engine::encode_constant_rate;
use crate::layers::{build_model, ActivationMode, ActivityCounters, GradBuffer, Model, Trace};
use crate::objective::{mse_loss_grad, one_hot, supcon_loss_grad, HeadGrads, ProjectionHead};
use crate::scalar::{real, Real};
use crate::seed::{domain, rng_for};
use crate::telemetry::firing_rates_from_counters;
use crate::tensor::TimedTensor;

/// A sample after normalization and spike encoding.
#[derive(Debug, Clone)]
pub struct EncodedSample<F> {
    pub x: TimedTensor<F>,
    pub label: usize,
    pub shape: [usize; 3],
}

/// Loads one split of a manifest, normalizes each block, and encodes it into
/// a spike-train input. Returns the samples plus their common input shape.
pub fn load_encoded_split<F: Real>(
    manifest: &DatasetManifest,
    split: Split,
    time_steps: usize,
) -> Result<(Vec<EncodedSample<F>>, [usize; 3]), TrainError> {
    let raw = manifest.load_split(split)?;
    if raw.is_empty() {
        return Err(TrainError::Data(format!(
            "split {} has no samples",
            split.as_str()
        )));
    }
    let n_class = manifest.class_count();
    let shape = [raw[0].channels, raw[0].height, raw[0].width];
    let mut out = Vec::with_capacity(raw.len());
    for s in &raw {
        if [s.channels, s.height, s.width] != shape {
            return Err(TrainError::Data(format!(
                "sample {} is {}x{}x{} but the split started with {}x{}x{}",
                s.source_id, s.channels, s.height, s.width, shape[0], shape[1], shape[2]
            )));
        }
        let label = s.label.class_index as usize;
        if label >= n_class {
            return Err(TrainError::Data(format!(
                "sample {} has class {} outside the {}-class manifest",
                s.source_id, label, n_class
            )));
        }
        let norm = normalize_mean_subtract(s)?;
        let values: Vec<F> = norm.values.iter().map(|&v| real::<F>(v as f64)).collect();
        let x = encode_constant_rate(&values, &shape, time_steps)?;
        out.push(EncodedSample { x, label, shape });
    }
    Ok((out, shape))
}

/// Side-channel options for [`train`]; the run itself depends only on the
/// config.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Write a checkpoint here at the end of every epoch.
    pub checkpoint_path: Option<PathBuf>,
    /// Write the epoch history CSV here after training.
    pub history_path: Option<PathBuf>,
    /// Restore state from this checkpoint and continue.
    pub resume: Option<PathBuf>,
    /// Per-epoch progress lines on stderr.
    pub verbose: bool,
}

/// One split's statistics after one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    pub split: Split,
    /// Hybrid loss, sample-weighted over batches.
    pub loss: f64,
    pub accuracy: f64,
    /// Mean firing rate per spiking layer, in layer order.
    pub rates: Vec<f64>,
}

/// Everything a finished run produces.
#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub model: Model<f32>,
    pub head: ProjectionHead<f32>,
    pub history: Vec<EpochRecord>,
    /// Spiking-layer names matching `EpochRecord::rates` columns.
    pub rate_names: Vec<String>,
    pub train_metrics: EvalMetrics,
    pub test_metrics: EvalMetrics,
}

/// Renders the epoch history as CSV: one row per (epoch, split), firing-rate
/// columns after the fixed four.
pub fn history_csv(records: &[EpochRecord]) -> String {
    let n_rates = records.first().map_or(0, |r| r.rates.len());
    let mut out = String::from("epoch,split,loss,accuracy");
    for i in 0..n_rates {
        let _ = write!(out, ",fr_layer_{i}");
    }
    out.push('\n');
    for r in records {
        let _ = write!(
            out,
            "{},{},{},{}",
            r.epoch,
            r.split.as_str(),
            r.loss,
            r.accuracy
        );
        for v in &r.rates {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Forward passes plus hybrid loss over one split, without shuffling or
/// gradients. Returns (loss, metrics, per-layer mean firing rates).
fn eval_pass(
    model: &Model<f32>,
    head: &ProjectionHead<f32>,
    data: &[EncodedSample<f32>],
    cfg: &TrainConfig,
) -> Result<(f64, EvalMetrics, Vec<f64>), TrainError> {
    let n_class = model.n_class;
    let g1 = cfg.loss.gamma1 as f32;
    let g2 = cfg.loss.gamma2 as f32;
    let tau = cfg.loss.tau as f32;
    let mut counters = ActivityCounters::for_model(model);
    let mut confusion = vec![vec![0u64; n_class]; n_class];
    let mut loss_sum = 0.0f64;
    for batch in data.chunks(cfg.batch_size) {
        let mut f_rows = Vec::with_capacity(batch.len());
        let mut y_rows = Vec::with_capacity(batch.len());
        let mut z_rows = Vec::with_capacity(batch.len());
        let mut labels = Vec::with_capacity(batch.len());
        let use_supcon = g2 != 0.0 && batch.len() >= 2;
        for s in batch {
            let out = model.forward_counted(&s.x, &mut counters)?;
            confusion[s.label][out.prediction] += 1;
            y_rows.push(one_hot::<f32>(s.label, n_class));
            if use_supcon {
                let tap = out.tap.as_ref().expect("tap layer verified at build");
                z_rows.push(head.project(tap)?);
            }
            f_rows.push(out.scores);
            labels.push(s.label);
        }
        let (mse, _) = mse_loss_grad(&f_rows, &y_rows)?;
        let scl = if use_supcon {
            supcon_loss_grad(&z_rows, &labels, tau)?.0
        } else {
            0.0
        };
        let batch_loss = g1 * mse + g2 * scl;
        loss_sum += batch_loss as f64 * batch.len() as f64;
    }
    let metrics = metrics_from_confusion(confusion);
    let report = firing_rates_from_counters(model, &counters)?;
    let rates = report.layers.iter().map(|l| l.mean).collect();
    Ok((loss_sum / data.len() as f64, metrics, rates))
}

/// Trains a model per the config and returns the final state plus history.
pub fn train(cfg: &TrainConfig, opts: &TrainOptions) -> Result<TrainedRun, TrainError> {
    cfg.validate()?;
    let manifest_path = cfg.dataset.manifest.as_ref().ok_or_else(|| {
        TrainError::Config("dataset.manifest is required to train".into())
    })?;
    let manifest = DatasetManifest::load(manifest_path)?;
    manifest.validate()?;
    let n_class = manifest.class_count();

    let (train_data, train_shape) =
        load_encoded_split::<f32>(&manifest, Split::Train, cfg.model.time_steps)?;
    let (test_data, test_shape) =
        load_encoded_split::<f32>(&manifest, Split::Test, cfg.model.time_steps)?;
    if train_shape != test_shape {
        return Err(TrainError::Data(format!(
            "train split is {train_shape:?} but test split is {test_shape:?}"
        )));
    }

    let mut model = build_model::<f32>(&cfg.model, train_shape, n_class, cfg.seed)?;
    let tap = model.tap_layer.ok_or_else(|| {
        TrainError::Config(
            "model has no spiking layer ahead of its final fc to project embeddings from".into(),
        )
    })?;
    let tap_len = model.layers[tap].out_shape.len();
    let mut head = ProjectionHead::<f32>::new(tap_len, cfg.loss.projection_dim, cfg.seed)?;

    let entries = model.param_entries();
    let mut slot_shapes: Vec<(String, usize)> =
        entries.iter().map(|e| (e.name.clone(), e.len)).collect();
    slot_shapes.push(("head.weight".into(), head.weight.len()));
    slot_shapes.push(("head.bias".into(), head.bias.len()));
    let head_w_slot = entries.len();
    let head_b_slot = entries.len() + 1;
    let mut adam = Adam::<f32>::new(&slot_shapes, cfg.beta1, cfg.beta2, cfg.epsilon);

    let mut start_epoch = 0usize;
    if let Some(resume_path) = &opts.resume {
        let ckpt = load_checkpoint(resume_path)?;
        if ckpt.config_sha256 != config_digest(cfg)? {
            return Err(TrainError::Checkpoint(
                "checkpoint was produced by a different config (only `epochs` may change on resume)"
                    .into(),
            ));
        }
        restore_into(&ckpt, &mut model, &mut head, &mut adam)?;
        start_epoch = ckpt.epoch as usize;
        if start_epoch >= cfg.epochs {
            return Err(TrainError::Config(format!(
                "checkpoint has already completed {start_epoch} of {} epochs; raise `epochs` to continue",
                cfg.epochs
            )));
        }
    }

    let lr = cfg.learning_rate as f32;
    let g1 = cfg.loss.gamma1 as f32;
    let g2 = cfg.loss.gamma2 as f32;
    let tau = cfg.loss.tau as f32;

    let mut grads = GradBuffer::zeros(&model);
    let mut head_grads = HeadGrads::zeros(&head);
    let mut history: Vec<EpochRecord> = Vec::new();
    let mut final_train: Option<EvalMetrics> = None;
    let mut final_test: Option<EvalMetrics> = None;

    for epoch in start_epoch..cfg.epochs {
        // Shuffle the identity order fresh each epoch so the batch sequence
        // is a pure function of (seed, epoch) — resume replays it exactly.
        let mut order: Vec<usize> = (0..train_data.len()).collect();
        let mut rng = rng_for(cfg.seed, &[domain::EPOCH_SHUFFLE, epoch as u64]);
        order.shuffle(&mut rng);

        for (batch_no, batch_idx) in order.chunks(cfg.batch_size).enumerate() {
            let context = |what: String| {
                TrainError::Numerics(format!(
                    "epoch {} batch {batch_no}: {what}",
                    epoch + 1
                ))
            };
            let use_supcon = g2 != 0.0 && batch_idx.len() >= 2;
            let mut f_rows = Vec::with_capacity(batch_idx.len());
            let mut y_rows = Vec::with_capacity(batch_idx.len());
            let mut z_rows = Vec::with_capacity(batch_idx.len());
            let mut taps: Vec<Vec<f32>> = Vec::with_capacity(batch_idx.len());
            let mut traces: Vec<Trace<f32>> = Vec::with_capacity(batch_idx.len());
            let mut labels = Vec::with_capacity(batch_idx.len());
            for &i in batch_idx {
                let s = &train_data[i];
                let (out, trace) = model.forward_traced(&s.x, ActivationMode::Spike)?;
                let tap_v = out.tap.expect("tap layer verified at build");
                if use_supcon {
                    z_rows.push(head.project(&tap_v)?);
                }
                taps.push(tap_v);
                f_rows.push(out.scores);
                y_rows.push(one_hot::<f32>(s.label, n_class));
                labels.push(s.label);
                traces.push(trace);
            }

            let (mse, dmse) = mse_loss_grad(&f_rows, &y_rows)?;
            let (scl, dscl) = if use_supcon {
                supcon_loss_grad(&z_rows, &labels, tau)?
            } else {
                (0.0, Vec::new())
            };
            let loss = g1 * mse + g2 * scl;
            if !loss.is_finite() {
                return Err(context(format!("loss is {loss}")));
            }

            grads.clear();
            head_grads.clear();
            for i in 0..batch_idx.len() {
                let d_scores: Vec<f32> = dmse[i].iter().map(|&d| g1 * d).collect();
                let d_tap_vec;
                let d_tap = if use_supcon {
                    let dz: Vec<f32> = dscl[i].iter().map(|&d| g2 * d).collect();
                    d_tap_vec = head.backward(&taps[i], &dz, &mut head_grads)?;
                    Some(d_tap_vec.as_slice())
                } else {
                    None
                };
                model.backward(&traces[i], &d_scores, d_tap, &mut grads)?;
            }

            adam.begin_step();
            for (slot, e) in entries.iter().enumerate() {
                adam.update(slot, model.param_slice_mut(e), &grads.slots[slot], lr)
                    .map_err(|e| match e {
                        TrainError::Numerics(m) => context(m),
                        other => other,
                    })?;
            }
            adam.update(head_w_slot, &mut head.weight, &head_grads.weight, lr)?;
            adam.update(head_b_slot, &mut head.bias, &head_grads.bias, lr)?;
        }

        let (train_loss, train_metrics, train_rates) =
            eval_pass(&model, &head, &train_data, cfg)?;
        let (test_loss, test_metrics, test_rates) = eval_pass(&model, &head, &test_data, cfg)?;
        if opts.verbose {
            eprintln!(
                "epoch {:>3}/{}  train loss {:.4} acc {:.4}  test loss {:.4} acc {:.4}",
                epoch + 1,
                cfg.epochs,
                train_loss,
                train_metrics.accuracy,
                test_loss,
                test_metrics.accuracy
            );
        }
        history.push(EpochRecord {
            epoch: epoch + 1,
            split: Split::Train,
            loss: train_loss,
            accuracy: train_metrics.accuracy,
            rates: train_rates,
        });
        history.push(EpochRecord {
            epoch: epoch + 1,
            split: Split::Test,
            loss: test_loss,
            accuracy: test_metrics.accuracy,
            rates: test_rates,
        });
        final_train = Some(train_metrics);
        final_test = Some(test_metrics);

        if let Some(path) = &opts.checkpoint_path {
            let ckpt = snapshot(&model, &head, &adam, (epoch + 1) as u64, cfg.seed, cfg)?;
            save_checkpoint(path, &ckpt)?;
        }
    }

    if let Some(path) = &opts.history_path {
        fs::write(path, history_csv(&history)).map_err(|source| TrainError::Io {
            path: path.clone(),
            source,
        })?;
    }

    let rate_names = model
        .layers
        .iter()
        .filter(|l| matches!(l.op, crate::layers::Layer::Neuron(_)))
        .map(|l| l.name.clone())
        .collect();
    Ok(TrainedRun {
        model,
        head,
        history,
        rate_names,
        train_metrics: final_train.expect("at least one epoch runs"),
        test_metrics: final_test.expect("at least one epoch runs"),
    })
}
