use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{add_view_noise, argmax, optimize_scene_params, Model, ShapeViews, TrainConfig, ViewMode};
use crate::cloud::PointCloud;
use crate::dataio::{Dataset, Sample, Split};
use crate::diffmath::{adamw_step, clip_global_norm, GradMap, OptimizerState, Tape, Value};
use crate::error::{Error, Result};
use crate::geomcam::ViewSet;
use crate::mvrender::{sample_augmentation, Augmentation, Mode};
use crate::regressor::PREFIX;
use crate::seed;

/// One row of the metrics stream.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub overall_acc: f64,
    pub per_class_acc: f64,
    pub wall_ms: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Mean cross-entropy.
    pub loss: f64,
    pub overall: f64,
    /// Unweighted mean of the recalls of the classes present.
    pub per_class: f64,
    pub predictions: Vec<usize>,
}

pub struct TrainOutcome {
    pub model: Model,
    pub metrics: Vec<EpochMetrics>,
    /// Loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
}

/// Overall accuracy and mean per-class accuracy, as fractions.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<(f64, f64)> {
    if labels.is_empty() || predictions.len() != labels.len() {
        return Err(Error::InvalidArgument(format!("{} predictions for {} labels", predictions.len(), labels.len())));
    }
    let k = labels.iter().max().expect("non-empty") + 1;
    let (mut hit, mut total) = (vec![0usize; k], vec![0usize; k]);
    for (&p, &l) in predictions.iter().zip(labels) {
        total[l] += 1;
        if p == l {
            hit[l] += 1;
        }
    }
    let correct: usize = hit.iter().sum();
    let recalls: Vec<f64> = (0..k).filter(|&c| total[c] > 0).map(|c| hit[c] as f64 / total[c] as f64).collect();
    Ok((correct as f64 / labels.len() as f64, recalls.iter().sum::<f64>() / recalls.len() as f64))
}

fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = mx + logits.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// Test-time accuracy of a frozen model. Shapes are processed in parallel
/// but results are reduced in dataset order.
pub fn evaluate(model: &Model, dataset: &Dataset) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate on an empty dataset".into()));
    }
    let logits = dataset
        .samples
        .par_iter()
        .map(|s| {
            if s.label >= model.classes {
                return Err(Error::InvalidArgument(format!("label {} of {:?} out of range", s.label, s.id)));
            }
            Ok(model.infer(&s.cloud)?.logits)
        })
        .collect::<Result<Vec<_>>>()?;
    let labels = dataset.labels();
    let predictions: Vec<usize> = logits.iter().map(|l| argmax(l)).collect();
    let loss = logits.iter().zip(&labels).map(|(l, &y)| cross_entropy(l, y)).sum::<f64>() / labels.len() as f64;
    let (overall, per_class) = accuracy(&predictions, &labels)?;
    Ok(EvalReport { loss, overall, per_class, predictions })
}

struct Optimizers {
    classifier: OptimizerState,
    regressor: OptimizerState,
}

fn stream(cfg: &TrainConfig, tag: &str, epoch: usize, index: usize) -> u64 {
    seed::derive(cfg.seed, tag, ((epoch as u64) << 32) | index as u64)
}

/// One optimizer step. Returns the batch loss and its predictions.
fn step(model: &mut Model, opt: &mut Optimizers, batch: &[(usize, &Sample)], epoch: usize, u0: &ViewSet) -> Result<(f64, Vec<usize>)> {
    let cfg = model.config.clone();
    let shapes: Vec<&PointCloud> = batch.iter().map(|(_, s)| &s.cloud).collect();
    let labels: Vec<usize> = batch.iter().map(|(_, s)| s.label).collect();
    let augs: Vec<Augmentation> =
        batch.iter().map(|(i, _)| sample_augmentation(&cfg.render, Mode::Train, stream(&cfg, "aug", epoch, *i))).collect();
    let mut inits: Vec<ViewSet> = batch
        .iter()
        .map(|(i, _)| {
            if cfg.view_noise && model.regressor.is_none() {
                let po = &cfg.param_opt;
                add_view_noise(u0, stream(&cfg, "view-noise", epoch, *i), po.noise_azimuth, po.noise_elevation)
            } else {
                Ok(u0.clone())
            }
        })
        .collect::<Result<_>>()?;
    if cfg.view_mode == ViewMode::ParamOpt {
        inits = optimize_scene_params(model, &shapes, &labels, &inits, &cfg.param_opt, &augs)?.views;
    }

    let tape = Tape::new();
    let frozen = cfg.regressor_frozen;
    let p = model.params.bind(&tape, |n| !(frozen && n.starts_with(PREFIX)));
    let views = shapes.iter().zip(&inits).map(|(s, u)| model.shape_views(&p, &tape, s, u)).collect::<Result<Vec<ShapeViews>>>()?;
    let (logits, _) = model.forward_batch(&p, &shapes, &views, &augs, &cfg.render)?;
    let k = model.classes;
    let terms = labels.iter().enumerate().map(|(i, &y)| logits.slice(i * k, k).cross_entropy(y)).collect::<Result<Vec<_>>>()?;
    let loss = Value::concat(&terms).mean();
    let value = loss.item();
    if !value.is_finite() {
        return Err(Error::InvalidArgument(format!("non-finite training loss at epoch {epoch}")));
    }
    let rows = logits.to_tensor().into_data();
    let preds = rows.chunks(k).map(argmax).collect();

    let grads = loss.backward()?;
    let (g_grads, c_grads): (GradMap, GradMap) = p.gradients(&grads, "").into_iter().partition(|(n, _)| n.starts_with(PREFIX));
    drop(p);
    adamw_step(model.params.as_map_mut(), &c_grads, &mut opt.classifier)?;
    if !g_grads.is_empty() {
        let g_grads = clip_global_norm(g_grads, cfg.clip)?;
        adamw_step(model.params.as_map_mut(), &g_grads, &mut opt.regressor)?;
    }
    Ok((value, preds))
}

/// Trains on the train split, evaluating on the test split as configured.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let train_set = dataset.split(Split::Train);
    let test_set = dataset.split(Split::Test);
    if train_set.is_empty() {
        return Err(Error::Config("dataset has no training shapes".into()));
    }
    if let Some(s) = dataset.samples.iter().find(|s| s.cloud.is_empty()) {
        return Err(Error::Config(format!("shape {:?} has no points", s.id)));
    }
    let mut model = Model::new(config, dataset.classes)?;
    let u0 = config.base_views()?;
    let mut opt = Optimizers {
        classifier: OptimizerState::new(config.lr, config.weight_decay),
        regressor: OptimizerState::new(config.regressor_lr, config.weight_decay),
    };
    let mut metrics = Vec::new();
    let mut step_losses = Vec::new();
    let clock = Instant::now();
    let elapsed = |c: &Instant| if config.timing { c.elapsed().as_millis() as u64 } else { 0 };
    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed::derive(config.seed, "shuffle", epoch as u64)));
        let (mut loss_sum, mut preds, mut labels) = (0.0, Vec::new(), Vec::new());
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(usize, &Sample)> = chunk.iter().map(|&i| (i, &train_set.samples[i])).collect();
            let (loss, p) = step(&mut model, &mut opt, &batch, epoch, &u0)?;
            step_losses.push(loss);
            loss_sum += loss * batch.len() as f64;
            preds.extend(p);
            labels.extend(batch.iter().map(|(_, s)| s.label));
        }
        let (overall, per_class) = accuracy(&preds, &labels)?;
        metrics.push(EpochMetrics {
            epoch,
            split: Split::Train,
            loss: loss_sum / labels.len() as f64,
            overall_acc: overall,
            per_class_acc: per_class,
            wall_ms: elapsed(&clock),
        });
        let due = epoch == config.epochs || (config.eval_every > 0 && epoch % config.eval_every == 0);
        if due && !test_set.is_empty() {
            let r = evaluate(&model, &test_set)?;
            metrics.push(EpochMetrics {
                epoch,
                split: Split::Test,
                loss: r.loss,
                overall_acc: r.overall,
                per_class_acc: r.per_class,
                wall_ms: elapsed(&clock),
            });
        }
    }
    Ok(TrainOutcome { model, metrics, step_losses })
}

const METRICS_HEADER: &str = "epoch,split,loss,overall_acc,per_class_acc,wall_ms";

pub fn write_metrics_csv(path: &Path, rows: &[EpochMetrics]) -> Result<()> {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{},{}", r.epoch, r.split.name(), r.loss, r.overall_acc, r.per_class_acc, r.wall_ms);
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<EpochMetrics>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let err = |line: usize, msg: String| Error::Parse { path: path.to_path_buf(), line, msg };
    match lines.next() {
        Some((_, h)) if h == METRICS_HEADER => {}
        _ => return Err(err(1, format!("expected header {METRICS_HEADER:?}"))),
    }
    lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || err(i + 1, format!("malformed row {l:?}"));
            if f.len() != 6 {
                return Err(bad());
            }
            let split = match f[1] {
                "train" => Split::Train,
                "test" => Split::Test,
                _ => return Err(bad()),
            };
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            Ok(EpochMetrics {
                epoch: f[0].parse().map_err(|_| bad())?,
                split,
                loss: num(f[2])?,
                overall_acc: num(f[3])?,
                per_class_acc: num(f[4])?,
                wall_ms: f[5].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}
