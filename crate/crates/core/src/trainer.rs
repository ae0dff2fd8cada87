//! Two-stage training.
//!
//! Stage 1 jointly optimizes the inlier cross-entropy and the outlier
//! objective over all heads (virtual-label CE for the main method, uniform
//! outlier exposure for the OE baseline, nothing for the MSP baseline),
//! with CutMix tail augmentation appended to each inlier batch. Stage 2
//! keeps the feature extractor frozen and fine-tunes the heads with the
//! logit-adjusted loss.
//!
//! Optimization is plain gradient descent with momentum 0.9; stage 1 uses a
//! cosine-annealed learning rate over the total step count. Identical
//! `(config, data)` produce bit-identical parameters.

use crate::augment::{make_tail_augmented_batch, tail_classes};
use crate::datasets::{Sample, SampleSet};
use crate::losses::la_rows_var;
use crate::losses::{oe_rows_var, outlier_rows_var, weighted_ce_rows_var, ClassPriors};
use crate::model::{forward_on_tape, ModelConfig, ModelParams};
use crate::numerics::{Tape, Tensor};
use crate::rng::{salt, stream_indexed};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

pub const MOMENTUM: f64 = 0.9;

/// Shuffle-stream epoch keys: stage 1 uses `2e` (inliers) and `2e+1`
/// (outliers); stage 2 starts here.
const STAGE2_SHUFFLE_BASE: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Virtual-label abstention training with CutMix tail augmentation;
    /// scores by abstention mass.
    Eat,
    /// Same architecture, outlier term swapped for the uniform outlier
    /// exposure loss; scores by MSP.
    OeBaseline,
    /// No outlier loss at all; scores by MSP.
    MspBaseline,
}

impl Method {
    /// The OOD score this method uses at evaluation time.
    pub fn score(&self, params: &ModelParams, x: &[f64]) -> Result<f64> {
        match self {
            Method::Eat => params.ood_score(x),
            Method::OeBaseline | Method::MspBaseline => params.msp_score(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub method: Method,
    /// Outlier-loss trade-off λ.
    pub lambda: f64,
    /// Abstention classes k.
    pub abstention: usize,
    /// Ensemble size m.
    pub heads: usize,
    /// Extractor feature width h.
    pub hidden: usize,
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub lr_stage1: f64,
    pub lr_stage2: f64,
    pub batch_size: usize,
    /// Weight of CutMix-generated tail samples.
    pub w_gen: f64,
    /// CutMix samples appended to each inlier batch (main method only).
    pub augment_per_batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            method: Method::Eat,
            lambda: 0.05,
            abstention: 3,
            heads: 3,
            hidden: crate::model::DEFAULT_HIDDEN,
            epochs_stage1: 40,
            epochs_stage2: 1,
            lr_stage1: 1e-2,
            lr_stage2: 1e-2,
            batch_size: 32,
            w_gen: 0.05,
            augment_per_batch: 8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(Error::Config(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        for lr in [self.lr_stage1, self.lr_stage2] {
            if !lr.is_finite() || lr <= 0.0 {
                return Err(Error::Config("learning rates must be positive".into()));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.heads == 0 {
            return Err(Error::Config("ensemble needs m >= 1 heads".into()));
        }
        if !(self.w_gen > 0.0 && self.w_gen <= 1.0) {
            return Err(Error::Config(format!(
                "w_gen must lie in (0, 1], got {}",
                self.w_gen
            )));
        }
        if self.method == Method::Eat && self.abstention == 0 {
            return Err(Error::Config(
                "virtual-label training needs k >= 1 abstention classes".into(),
            ));
        }
        Ok(())
    }

    pub fn model_config(&self, input_dim: usize, num_classes: usize) -> ModelConfig {
        ModelConfig {
            input_dim,
            hidden: self.hidden,
            num_classes,
            abstention: self.abstention,
            heads: self.heads,
        }
    }
}

/// One loss-trace row, serialized to CSV as `epoch,split,mean_loss`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub epoch: usize,
    pub split: &'static str,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossTrace {
    pub rows: Vec<TraceRow>,
}

impl LossTrace {
    pub fn push(&mut self, epoch: usize, split: &'static str, mean_loss: f64) {
        self.rows.push(TraceRow {
            epoch,
            split,
            mean_loss,
        });
    }

    /// Mean losses of one split, ordered by epoch.
    pub fn series(&self, split: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.split == split)
            .map(|r| r.mean_loss)
            .collect()
    }

    pub fn extend(&mut self, other: LossTrace) {
        self.rows.extend(other.rows);
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("epoch,split,mean_loss\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{}",
                r.epoch,
                r.split,
                crate::datasets::format_f64(r.mean_loss)
            );
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

struct SgdState {
    velocity: Vec<Vec<f64>>,
}

impl SgdState {
    fn new(params: &ModelParams) -> Self {
        SgdState {
            velocity: params
                .param_list()
                .iter()
                .map(|t| vec![0.0; t.len()])
                .collect(),
        }
    }

    /// `v ← μ·v + g; θ ← θ − lr·v`, skipping tensors where `frozen` is true.
    fn apply(
        &mut self,
        params: &mut ModelParams,
        grads: &[Vec<f64>],
        lr: f64,
        frozen: impl Fn(usize) -> bool,
    ) {
        for (idx, t) in params.param_list_mut().into_iter().enumerate() {
            if frozen(idx) {
                continue;
            }
            let v = &mut self.velocity[idx];
            for ((vi, gi), xi) in v.iter_mut().zip(&grads[idx]).zip(t.data_mut()) {
                *vi = MOMENTUM * *vi + gi;
                *xi -= lr * *vi;
            }
        }
    }
}

fn cosine_lr(base: f64, step: usize, total_steps: usize) -> f64 {
    if total_steps == 0 {
        return base;
    }
    let t = step as f64 / total_steps as f64;
    base * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}

fn check_labels(set: &SampleSet, num_classes: usize) -> Result<()> {
    set.class_counts(num_classes).map(|_| ())
}

fn wrap_step_error(err: Error, epoch: usize, step: usize) -> Error {
    match err {
        Error::Numeric { op, detail } => Error::Training {
            epoch,
            step,
            detail: format!("non-finite values in {op}: {detail}"),
        },
        other => other,
    }
}

/// Stage 1: joint training on inliers and outliers. The outlier set may be
/// empty only for the MSP baseline. Returns the trained parameters and the
/// per-epoch loss trace (splits `stage1_total`, `stage1_inlier`,
/// `stage1_outlier`).
pub fn train_stage1(
    cfg: &TrainConfig,
    num_classes: usize,
    inliers: &SampleSet,
    outliers: &SampleSet,
) -> Result<(ModelParams, LossTrace)> {
    cfg.validate()?;
    if inliers.is_empty() {
        return Err(Error::Contract(
            "stage 1 needs a nonempty inlier set".into(),
        ));
    }
    check_labels(inliers, num_classes)?;
    if outliers.is_empty() && cfg.method != Method::MspBaseline {
        return Err(Error::Contract(
            "the outlier set may be empty only for the MSP baseline".into(),
        ));
    }
    let mut params = ModelParams::init(cfg.model_config(inliers.dim, num_classes), cfg.seed)?;
    let mut trace = LossTrace::default();
    if cfg.epochs_stage1 == 0 {
        return Ok((params, trace));
    }

    // CutMix pools (main method only)
    let augment = cfg.method == Method::Eat && cfg.augment_per_batch > 0;
    let (tail_pool, head_pool, grid_side) = if augment {
        let counts = inliers.class_counts(num_classes)?;
        let tail_set = tail_classes(&counts);
        let tail_pool: Vec<&Sample> = inliers
            .samples
            .iter()
            .filter(|s| tail_set.contains(&(s.label as usize)))
            .collect();
        let head_pool: Vec<&Sample> = inliers
            .samples
            .iter()
            .filter(|s| !tail_set.contains(&(s.label as usize)))
            .collect();
        let side = (inliers.dim as f64).sqrt().round() as usize;
        if side * side != inliers.dim || side < 2 {
            return Err(Error::Config(format!(
                "CutMix augmentation needs a square input grid, got dim {}",
                inliers.dim
            )));
        }
        (tail_pool, head_pool, side)
    } else {
        (Vec::new(), Vec::new(), 0)
    };
    let ood_pool: Vec<&Sample> = outliers.samples.iter().collect();

    let n_in = inliers.len();
    let n_out = outliers.len();
    let batches_per_epoch = n_in.div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs_stage1 * batches_per_epoch;
    let mut sgd = SgdState::new(&params);
    let mut step = 0usize;

    for epoch in 0..cfg.epochs_stage1 {
        let in_order = crate::datasets::shuffled_indices(n_in, cfg.seed, 2 * epoch as u64);
        let out_order = if n_out > 0 {
            crate::datasets::shuffled_indices(n_out, cfg.seed, 2 * epoch as u64 + 1)
        } else {
            Vec::new()
        };
        let mut aug_rng = stream_indexed(cfg.seed, salt::AUGMENT, epoch as u64);

        let (mut sum_total, mut sum_in, mut sum_out) = (0.0, 0.0, 0.0);
        for b in 0..batches_per_epoch {
            let lo = b * cfg.batch_size;
            let hi = ((b + 1) * cfg.batch_size).min(n_in);
            let mut rows: Vec<Vec<f64>> = Vec::with_capacity(hi - lo + cfg.augment_per_batch);
            let mut labels: Vec<usize> = Vec::with_capacity(rows.capacity());
            let mut weights: Vec<f64> = Vec::with_capacity(rows.capacity());
            for &i in &in_order[lo..hi] {
                let s = &inliers.samples[i];
                rows.push(s.values.clone());
                labels.push(s.label as usize);
                weights.push(1.0);
            }
            if augment && !tail_pool.is_empty() {
                let generated = make_tail_augmented_batch(
                    &tail_pool,
                    &head_pool,
                    &ood_pool,
                    grid_side,
                    grid_side,
                    cfg.augment_per_batch,
                    cfg.w_gen,
                    &mut aug_rng,
                )?;
                rows.extend(generated.inputs);
                labels.extend(generated.labels);
                weights.extend(generated.weights);
            }

            let use_outliers = cfg.method != Method::MspBaseline && n_out > 0;
            let out_rows: Vec<Vec<f64>> = if use_outliers {
                (0..cfg.batch_size)
                    .map(|j| {
                        let idx = out_order[(lo + j) % n_out];
                        outliers.samples[idx].values.clone()
                    })
                    .collect()
            } else {
                Vec::new()
            };

            let step_result = (|| -> Result<(f64, f64, f64)> {
                let tape = Tape::new();
                let pv = params.leaves(&tape);
                let in_logits = forward_on_tape(&tape, &pv, &Tensor::from_rows(&rows)?);
                let out_logits = if use_outliers {
                    Some(forward_on_tape(&tape, &pv, &Tensor::from_rows(&out_rows)?))
                } else {
                    None
                };
                let mut total = None;
                let (mut in_val, mut out_val) = (0.0, 0.0);
                for (h, &il) in in_logits.iter().enumerate() {
                    let in_term = weighted_ce_rows_var(&tape, il, &labels, &weights)?;
                    in_val += tape.scalar(in_term);
                    let head_term = if let Some(out) = &out_logits {
                        let out_term = match cfg.method {
                            Method::Eat => {
                                outlier_rows_var(&tape, out[h], num_classes, cfg.abstention)?
                            }
                            Method::OeBaseline => oe_rows_var(&tape, out[h], num_classes)?,
                            Method::MspBaseline => unreachable!("no outlier term for MSP"),
                        };
                        out_val += tape.scalar(out_term);
                        tape.add(in_term, tape.scale(out_term, cfg.lambda))
                    } else {
                        in_term
                    };
                    total = Some(match total {
                        None => head_term,
                        Some(t) => tape.add(t, head_term),
                    });
                }
                let total = total.expect("m >= 1");
                let value = tape.scalar(total);
                if !value.is_finite() {
                    return Err(Error::Numeric {
                        op: "total_loss",
                        detail: format!("loss value {value}"),
                    });
                }
                tape.backward(total);
                let grads: Vec<Vec<f64>> = pv.all().iter().map(|&v| tape.grad(v)).collect();
                sgd.apply(
                    &mut params,
                    &grads,
                    cosine_lr(cfg.lr_stage1, step, total_steps),
                    |_| false,
                );
                Ok((value, in_val, out_val))
            })()
            .map_err(|e| wrap_step_error(e, epoch, step))?;

            sum_total += step_result.0;
            sum_in += step_result.1;
            sum_out += step_result.2;
            step += 1;
        }
        let nb = batches_per_epoch as f64;
        trace.push(epoch, "stage1_total", sum_total / nb);
        trace.push(epoch, "stage1_inlier", sum_in / nb);
        trace.push(epoch, "stage1_outlier", sum_out / nb);
    }
    Ok((params, trace))
}

/// Stage 2: head-only fine-tuning with the logit-adjusted loss. The
/// extractor weights are bit-identical before and after. Priors must come
/// from the training inlier set.
pub fn finetune_stage2(
    params: &ModelParams,
    cfg: &TrainConfig,
    inliers: &SampleSet,
    priors: &ClassPriors,
) -> Result<(ModelParams, LossTrace)> {
    cfg.validate()?;
    if inliers.is_empty() {
        return Err(Error::Contract(
            "stage 2 needs a nonempty inlier set".into(),
        ));
    }
    let num_classes = priors.len();
    check_labels(inliers, num_classes)?;
    if params.config.num_classes != num_classes {
        return Err(Error::Contract(format!(
            "model has {} classes but priors cover {num_classes}",
            params.config.num_classes
        )));
    }
    let mut tuned = params.clone();
    let mut trace = LossTrace::default();
    if cfg.epochs_stage2 == 0 {
        return Ok((tuned, trace));
    }
    let n_in = inliers.len();
    let batches_per_epoch = n_in.div_ceil(cfg.batch_size);
    let mut sgd = SgdState::new(&tuned);
    // param_list order puts w1, b1, w2, b2 at indices 0..4
    let extractor_frozen = |idx: usize| idx < 4;
    let mut step = 0usize;

    for epoch in 0..cfg.epochs_stage2 {
        let order =
            crate::datasets::shuffled_indices(n_in, cfg.seed, STAGE2_SHUFFLE_BASE + epoch as u64);
        let mut sum_loss = 0.0;
        for b in 0..batches_per_epoch {
            let lo = b * cfg.batch_size;
            let hi = ((b + 1) * cfg.batch_size).min(n_in);
            let mut rows = Vec::with_capacity(hi - lo);
            let mut labels = Vec::with_capacity(hi - lo);
            for &i in &order[lo..hi] {
                let s = &inliers.samples[i];
                rows.push(s.values.clone());
                labels.push(s.label as usize);
            }
            let step_result = (|| -> Result<f64> {
                let tape = Tape::new();
                let pv = tuned.leaves(&tape);
                let logits = forward_on_tape(&tape, &pv, &Tensor::from_rows(&rows)?);
                let mut total = None;
                for &l in &logits {
                    let term = la_rows_var(&tape, l, &labels, priors)?;
                    total = Some(match total {
                        None => term,
                        Some(t) => tape.add(t, term),
                    });
                }
                let total = total.expect("m >= 1");
                let value = tape.scalar(total);
                if !value.is_finite() {
                    return Err(Error::Numeric {
                        op: "la_loss",
                        detail: format!("loss value {value}"),
                    });
                }
                tape.backward(total);
                let grads: Vec<Vec<f64>> = pv.all().iter().map(|&v| tape.grad(v)).collect();
                sgd.apply(&mut tuned, &grads, cfg.lr_stage2, extractor_frozen);
                Ok(value)
            })()
            .map_err(|e| wrap_step_error(e, epoch, step))?;
            sum_loss += step_result;
            step += 1;
        }
        trace.push(epoch, "stage2", sum_loss / batches_per_epoch as f64);
    }
    Ok((tuned, trace))
}
