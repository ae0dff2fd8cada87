//! Shared dense feature extractor with `m` classifier heads over `C + k`
//! logits, plus the ensemble OOD score, inlier prediction rule, and the MSP
//! baseline score.
//!
//! The extractor is two dense layers with rectified-linear activations
//! (`d → h → h`); each head is an affine map `h → C + k`. Heads are
//! initialized independently at random. `k = 0` is a valid baseline
//! configuration: the abstention mass is then identically zero and MSP is
//! the only detector.

use crate::losses::probs;
use crate::numerics::{Tape, Tensor, Var};
use crate::rng::{salt, stream_indexed};
use crate::{Error, Result};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// Default feature width; the smallest at which the augmentation and
/// virtual-label effects are measurable on the synthetic benchmarks.
pub const DEFAULT_HIDDEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Input dimension d.
    pub input_dim: usize,
    /// Feature width h.
    pub hidden: usize,
    /// Inlier classes C.
    pub num_classes: usize,
    /// Abstention classes k (0 in baseline configurations).
    pub abstention: usize,
    /// Ensemble size m.
    pub heads: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden == 0 || self.num_classes == 0 {
            return Err(Error::Config(format!(
                "model dimensions must be positive: {self:?}"
            )));
        }
        if self.heads == 0 {
            return Err(Error::Config("ensemble needs m >= 1 heads".into()));
        }
        Ok(())
    }

    pub fn logit_width(&self) -> usize {
        self.num_classes + self.abstention
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    /// `h × (C+k)` weights.
    pub w: Tensor,
    /// `C+k` bias.
    pub b: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    /// `d × h` first-layer weights.
    pub w1: Tensor,
    pub b1: Tensor,
    /// `h × h` second-layer weights.
    pub w2: Tensor,
    pub b2: Tensor,
    pub heads: Vec<HeadParams>,
}

fn he_matrix(rows: usize, cols: usize, rng: &mut impl rand::Rng) -> Tensor {
    let std = (2.0 / rows as f64).sqrt();
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng) * std)
        .collect();
    Tensor::new(vec![rows, cols], data).expect("shape matches data")
}

impl ModelParams {
    /// Random initialization: He-scaled normal weights, zero biases. The
    /// extractor and each head draw from separate streams, so head `i` is
    /// identical across runs regardless of `m`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut ext_rng = stream_indexed(seed, salt::MODEL_INIT, 0);
        let w1 = he_matrix(config.input_dim, config.hidden, &mut ext_rng);
        let b1 = Tensor::zeros(vec![config.hidden]);
        let w2 = he_matrix(config.hidden, config.hidden, &mut ext_rng);
        let b2 = Tensor::zeros(vec![config.hidden]);
        let heads = (0..config.heads)
            .map(|i| {
                let mut rng = stream_indexed(seed, salt::MODEL_INIT, 1 + i as u64);
                HeadParams {
                    w: he_matrix(config.hidden, config.logit_width(), &mut rng),
                    b: Tensor::zeros(vec![config.logit_width()]),
                }
            })
            .collect();
        Ok(ModelParams {
            config,
            w1,
            b1,
            w2,
            b2,
            heads,
        })
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.config.input_dim {
            return Err(Error::Contract(format!(
                "input has dim {}, model expects {}",
                x.len(),
                self.config.input_dim
            )));
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                op: "forward",
                detail: format!("non-finite input at index {i}"),
            });
        }
        Ok(())
    }

    fn affine(x: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
        let (rows, cols) = (w.shape()[0], w.shape()[1]);
        let mut out = b.data().to_vec();
        for (i, &xi) in x.iter().enumerate().take(rows) {
            if xi == 0.0 {
                continue;
            }
            let wrow = w.row(i);
            for (o, &wv) in out.iter_mut().zip(wrow) {
                *o += xi * wv;
            }
        }
        debug_assert_eq!(out.len(), cols);
        out
    }

    /// Shared extractor features for one input.
    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut a = Self::affine(x, &self.w1, &self.b1);
        for v in &mut a {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let mut a2 = Self::affine(&a, &self.w2, &self.b2);
        for v in &mut a2 {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        Ok(a2)
    }

    /// Forward pass: `m` logit vectors of length `C+k`, one per head, from a
    /// single extractor evaluation.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        let feats = self.features(x)?;
        Ok(self
            .heads
            .iter()
            .map(|h| Self::affine(&feats, &h.w, &h.b))
            .collect())
    }

    /// Head-averaged softmax probabilities over all `C+k` classes.
    pub fn avg_probs(&self, x: &[f64]) -> Result<Vec<f64>> {
        let logits = self.forward(x)?;
        let width = self.config.logit_width();
        let mut acc = vec![0.0; width];
        for l in &logits {
            for (a, p) in acc.iter_mut().zip(probs(l)) {
                *a += p;
            }
        }
        let m = logits.len() as f64;
        for a in &mut acc {
            *a /= m;
        }
        Ok(acc)
    }

    /// Ensemble OOD score: head-averaged total abstention mass, in `[0,1]`.
    pub fn ood_score(&self, x: &[f64]) -> Result<f64> {
        let p = self.avg_probs(x)?;
        Ok(p[self.config.num_classes..].iter().sum())
    }

    /// Inlier prediction: argmax over the first `C` entries of the
    /// head-averaged probabilities, ties to the lowest index.
    pub fn predict_inlier(&self, x: &[f64]) -> Result<usize> {
        let p = self.avg_probs(x)?;
        let mut best = 0;
        for c in 1..self.config.num_classes {
            if p[c] > p[best] {
                best = c;
            }
        }
        Ok(best)
    }

    /// MSP baseline score: `1 − max inlier probability` (higher = more OOD).
    pub fn msp_score(&self, x: &[f64]) -> Result<f64> {
        let p = self.avg_probs(x)?;
        let max_inlier = p[..self.config.num_classes]
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(1.0 - max_inlier)
    }

    /// Parameters in canonical order: w1, b1, w2, b2, then each head's w, b.
    pub fn param_list(&self) -> Vec<&Tensor> {
        let mut v = vec![&self.w1, &self.b1, &self.w2, &self.b2];
        for h in &self.heads {
            v.push(&h.w);
            v.push(&h.b);
        }
        v
    }

    pub fn param_list_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2];
        for h in &mut self.heads {
            v.push(&mut h.w);
            v.push(&mut h.b);
        }
        v
    }

    /// Extractor parameters only (the stage-2 freeze set).
    pub fn extractor_tensors(&self) -> [&Tensor; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    /// Flattened `θ` for one classifier: extractor followed by that head.
    pub fn flatten_theta(&self, head: usize) -> Result<Vec<f64>> {
        if head >= self.heads.len() {
            return Err(Error::Contract(format!(
                "head {head} out of range for m = {}",
                self.heads.len()
            )));
        }
        let mut theta = Vec::new();
        for t in self.extractor_tensors() {
            theta.extend_from_slice(t.data());
        }
        theta.extend_from_slice(self.heads[head].w.data());
        theta.extend_from_slice(self.heads[head].b.data());
        Ok(theta)
    }

    /// Rebuild a model replacing the extractor and the given head from a
    /// flattened `θ` (inverse of [`ModelParams::flatten_theta`]).
    pub fn with_theta(&self, head: usize, theta: &[f64]) -> Result<ModelParams> {
        let expect = self.theta_len(head)?;
        if theta.len() != expect {
            return Err(Error::Contract(format!(
                "theta has {} entries, expected {expect}",
                theta.len()
            )));
        }
        let mut out = self.clone();
        let mut offset = 0;
        let mut take = |t: &mut Tensor| {
            let n = t.len();
            t.data_mut().copy_from_slice(&theta[offset..offset + n]);
            offset += n;
        };
        take(&mut out.w1);
        take(&mut out.b1);
        take(&mut out.w2);
        take(&mut out.b2);
        take(&mut out.heads[head].w);
        take(&mut out.heads[head].b);
        Ok(out)
    }

    pub fn theta_len(&self, head: usize) -> Result<usize> {
        if head >= self.heads.len() {
            return Err(Error::Contract(format!(
                "head {head} out of range for m = {}",
                self.heads.len()
            )));
        }
        Ok(self
            .extractor_tensors()
            .iter()
            .map(|t| t.len())
            .sum::<usize>()
            + self.heads[head].w.len()
            + self.heads[head].b.len())
    }
}

/// Tape handles for every parameter tensor, in the same canonical order as
/// [`ModelParams::param_list`].
pub struct ParamVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub heads: Vec<(Var, Var)>,
}

impl ParamVars {
    pub fn all(&self) -> Vec<Var> {
        let mut v = vec![self.w1, self.b1, self.w2, self.b2];
        for &(w, b) in &self.heads {
            v.push(w);
            v.push(b);
        }
        v
    }
}

impl ModelParams {
    pub fn leaves(&self, tape: &Tape) -> ParamVars {
        ParamVars {
            w1: tape.leaf(&self.w1),
            b1: tape.leaf(&self.b1),
            w2: tape.leaf(&self.w2),
            b2: tape.leaf(&self.b2),
            heads: self
                .heads
                .iter()
                .map(|h| (tape.leaf(&h.w), tape.leaf(&h.b)))
                .collect(),
        }
    }
}

/// Differentiable batch forward pass: `inputs` is `n × d`; returns one
/// `n × (C+k)` logits node per head, all sharing one extractor evaluation.
pub fn forward_on_tape(tape: &Tape, params: &ParamVars, inputs: &Tensor) -> Vec<Var> {
    let x = tape.leaf(inputs);
    let a1 = tape.relu(tape.add_row(tape.matmul(x, params.w1), params.b1));
    let a2 = tape.relu(tape.add_row(tape.matmul(a1, params.w2), params.b2));
    params
        .heads
        .iter()
        .map(|&(w, b)| tape.add_row(tape.matmul(a2, w), b))
        .collect()
}

// ── Checkpoint format ────────────────────────────────────────────────
//
// Version-1 checkpoint: a JSON object
//   { "version": 1, "input_dim": d, "hidden": h, "num_classes": C,
//     "abstention": k, "heads": m,
//     "tensors": { "w1": {"shape": [..], "data": [..]}, "b1": ..., "w2": ...,
//                  "b2": ..., "head0.w": ..., "head0.b": ..., ... } }
// Values round-trip exactly (serde_json prints shortest-round-trip floats).

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorData {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    input_dim: usize,
    hidden: usize,
    num_classes: usize,
    abstention: usize,
    heads: usize,
    tensors: BTreeMap<String, TensorData>,
}

fn tensor_entry(t: &Tensor) -> TensorData {
    TensorData {
        shape: t.shape().to_vec(),
        data: t.data().to_vec(),
    }
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let mut tensors = BTreeMap::new();
    tensors.insert("w1".to_string(), tensor_entry(&params.w1));
    tensors.insert("b1".to_string(), tensor_entry(&params.b1));
    tensors.insert("w2".to_string(), tensor_entry(&params.w2));
    tensors.insert("b2".to_string(), tensor_entry(&params.b2));
    for (i, h) in params.heads.iter().enumerate() {
        tensors.insert(format!("head{i}.w"), tensor_entry(&h.w));
        tensors.insert(format!("head{i}.b"), tensor_entry(&h.b));
    }
    let file = CheckpointFile {
        version: CHECKPOINT_VERSION,
        input_dim: params.config.input_dim,
        hidden: params.config.hidden,
        num_classes: params.config.num_classes,
        abstention: params.config.abstention,
        heads: params.config.heads,
        tensors,
    };
    let text = serde_json::to_string(&file).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        detail: format!("checkpoint serialization failed: {e}"),
    })?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CheckpointFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        detail: e.to_string(),
    })?;
    if file.version != CHECKPOINT_VERSION {
        return Err(Error::Config(format!(
            "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
            file.version
        )));
    }
    let config = ModelConfig {
        input_dim: file.input_dim,
        hidden: file.hidden,
        num_classes: file.num_classes,
        abstention: file.abstention,
        heads: file.heads,
    };
    config.validate()?;
    let get = |name: &str, shape: Vec<usize>| -> Result<Tensor> {
        let entry = file.tensors.get(name).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            detail: format!("checkpoint missing tensor {name:?}"),
        })?;
        if entry.shape != shape {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                detail: format!(
                    "tensor {name:?} has shape {:?}, expected {shape:?}",
                    entry.shape
                ),
            });
        }
        Tensor::new(entry.shape.clone(), entry.data.clone())
    };
    let (d, h, width) = (config.input_dim, config.hidden, config.logit_width());
    let mut heads = Vec::with_capacity(config.heads);
    for i in 0..config.heads {
        heads.push(HeadParams {
            w: get(&format!("head{i}.w"), vec![h, width])?,
            b: get(&format!("head{i}.b"), vec![width])?,
        });
    }
    Ok(ModelParams {
        config,
        w1: get("w1", vec![d, h])?,
        b1: get("b1", vec![h])?,
        w2: get("w2", vec![h, h])?,
        b2: get("b2", vec![h])?,
        heads,
    })
}
