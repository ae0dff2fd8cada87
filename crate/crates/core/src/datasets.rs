//! Synthetic long-tailed in-distribution data, OOD data, and CSV I/O.
//!
//! Class counts follow the exponential profile
//! `n_c = round(head_count · ρ^(−c/(C−1)))`. Two geometries are supported:
//! isotropic Gaussian clusters (class means on a sphere of radius
//! [`MEAN_RADIUS`]), and grid images where a class-specific binary pattern is
//! rendered into a W×H grid with an amplitude jitter, a per-sample context
//! offset, and pixel noise. The grid mode gives CutMix masks spatial meaning.
//!
//! All generation is a pure function of `(spec, seed)`: equal specs produce
//! byte-identical CSV dumps.

use crate::rng::{salt, stream, stream_indexed};
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

/// Distance of inlier class means from the origin (gaussian-clusters mode).
pub const MEAN_RADIUS: f64 = 4.0;
/// Within-class standard deviation (gaussian-clusters mode).
pub const CLUSTER_SIGMA: f64 = 1.0;
/// Distance of the shifted-gaussian OOD cluster from the origin.
pub const OOD_SHIFT_RADIUS: f64 = 8.0;
/// Fraction of lit cells in a grid pattern.
pub const PATTERN_DENSITY: f64 = 0.35;
/// Grid-image amplitude jitter range (uniform).
pub const AMPLITUDE_RANGE: (f64, f64) = (0.7, 1.3);
/// Grid-image per-sample context offset std-dev.
pub const CONTEXT_SIGMA: f64 = 0.8;
/// Grid-image per-pixel noise std-dev.
pub const PIXEL_SIGMA: f64 = 0.35;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Geometry {
    GaussianClusters,
    GridImage,
}

/// Description of a synthetic long-tailed labeled dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongTailSpec {
    pub num_classes: usize,
    /// ρ = largest class count / smallest class count, ≥ 1.
    pub imbalance_ratio: f64,
    /// Samples in the most frequent class.
    pub head_count: usize,
    pub input_dim: usize,
    pub geometry: Geometry,
    pub seed: u64,
}

impl LongTailSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::Config("num_classes must be positive".into()));
        }
        if self.imbalance_ratio.is_nan() || self.imbalance_ratio < 1.0 {
            return Err(Error::Config(format!(
                "imbalance_ratio must be >= 1, got {}",
                self.imbalance_ratio
            )));
        }
        if self.head_count == 0 {
            return Err(Error::Config("head_count must be positive".into()));
        }
        if self.input_dim == 0 {
            return Err(Error::Config("input_dim must be positive".into()));
        }
        if self.geometry == Geometry::GridImage {
            grid_side(self.input_dim)?;
        }
        Ok(())
    }
}

/// One labeled (or unlabeled, label = −1) sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: u64,
    /// Class id in `[0, C)`, or −1 for unlabeled OOD.
    pub label: i64,
    pub values: Vec<f64>,
}

/// A homogeneous collection of samples of one dimensionality.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub dim: usize,
    pub samples: Vec<Sample>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Per-class sample counts over `[0, num_classes)`. Unlabeled samples are
    /// a contract violation here.
    pub fn class_counts(&self, num_classes: usize) -> Result<Vec<usize>> {
        let mut counts = vec![0usize; num_classes];
        for s in &self.samples {
            if s.label < 0 || s.label as usize >= num_classes {
                return Err(Error::Contract(format!(
                    "sample {} has label {} outside [0, {num_classes})",
                    s.id, s.label
                )));
            }
            counts[s.label as usize] += 1;
        }
        Ok(counts)
    }
}

/// Realized labeled samples with per-sample loss weights in (0, 1].
#[derive(Debug, Clone)]
pub struct Batch {
    /// Row-major `n × d` inputs.
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub weights: Vec<f64>,
}

impl Batch {
    pub fn empty() -> Self {
        Batch {
            inputs: Vec::new(),
            labels: Vec::new(),
            weights: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Exponential long-tail class counts `round(head · ρ^(−c/(C−1)))`.
pub fn class_counts(spec: &LongTailSpec) -> Result<Vec<usize>> {
    spec.validate()?;
    let c = spec.num_classes;
    let counts: Vec<usize> = (0..c)
        .map(|i| {
            let exponent = if c == 1 {
                0.0
            } else {
                -(i as f64) / (c as f64 - 1.0)
            };
            (spec.head_count as f64 * spec.imbalance_ratio.powf(exponent)).round() as usize
        })
        .collect();
    if *counts.last().expect("c >= 1") < 1 {
        return Err(Error::Config(format!(
            "infeasible spec: smallest class count rounds to zero \
             (head_count {} at ratio {})",
            spec.head_count, spec.imbalance_ratio
        )));
    }
    Ok(counts)
}

fn grid_side(dim: usize) -> Result<usize> {
    let side = (dim as f64).sqrt().round() as usize;
    if side * side != dim {
        return Err(Error::Config(format!(
            "grid-image mode needs a square input_dim, got {dim}"
        )));
    }
    Ok(side)
}

/// Deterministic binary W×H pattern for a pattern index. Pattern indices
/// `[0, C)` belong to the inlier classes; held-out OOD patterns use higher
/// indices.
pub fn grid_pattern(index: u64, width: usize, height: usize) -> Vec<f64> {
    let mut rng = stream_indexed(0, salt::DATA_PATTERN, index);
    (0..width * height)
        .map(|_| {
            if rng.gen::<f64>() < PATTERN_DENSITY {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

fn unit_direction(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn render_grid_sample(pattern: &[f64], rng: &mut impl Rng) -> Vec<f64> {
    let amplitude = rng.gen_range(AMPLITUDE_RANGE.0..AMPLITUDE_RANGE.1);
    let context: f64 = rng.sample::<f64, _>(StandardNormal) * CONTEXT_SIGMA;
    pattern
        .iter()
        .map(|&p| amplitude * p + context + rng.sample::<f64, _>(StandardNormal) * PIXEL_SIGMA)
        .collect()
}

/// Generate the long-tailed labeled set described by `spec`.
pub fn gen_longtail(spec: &LongTailSpec) -> Result<SampleSet> {
    let counts = class_counts(spec)?;
    let mut samples = Vec::with_capacity(counts.iter().sum());
    let mut next_id = 0u64;
    match spec.geometry {
        Geometry::GaussianClusters => {
            let mut mean_rng = stream(spec.seed, salt::DATA_MEANS);
            let means: Vec<Vec<f64>> = (0..spec.num_classes)
                .map(|_| {
                    unit_direction(&mut mean_rng, spec.input_dim)
                        .into_iter()
                        .map(|x| x * MEAN_RADIUS)
                        .collect()
                })
                .collect();
            for (class, &n) in counts.iter().enumerate() {
                let mut rng = stream_indexed(spec.seed, salt::DATA_SAMPLES, class as u64);
                for _ in 0..n {
                    let values: Vec<f64> = means[class]
                        .iter()
                        .map(|m| m + rng.sample::<f64, _>(StandardNormal) * CLUSTER_SIGMA)
                        .collect();
                    samples.push(Sample {
                        id: next_id,
                        label: class as i64,
                        values,
                    });
                    next_id += 1;
                }
            }
        }
        Geometry::GridImage => {
            let side = grid_side(spec.input_dim)?;
            for (class, &n) in counts.iter().enumerate() {
                let pattern = grid_pattern(class as u64, side, side);
                let mut rng = stream_indexed(spec.seed, salt::DATA_SAMPLES, class as u64);
                for _ in 0..n {
                    samples.push(Sample {
                        id: next_id,
                        label: class as i64,
                        values: render_grid_sample(&pattern, &mut rng),
                    });
                    next_id += 1;
                }
            }
        }
    }
    Ok(SampleSet {
        dim: spec.input_dim,
        samples,
    })
}

/// A balanced labeled set from the same generators as [`gen_longtail`], for
/// evaluation. Uses its own seed so evaluation draws never repeat training
/// draws.
pub fn gen_balanced_test(spec: &LongTailSpec, per_class: usize, seed: u64) -> Result<SampleSet> {
    let balanced = LongTailSpec {
        imbalance_ratio: 1.0,
        head_count: per_class,
        seed,
        ..spec.clone()
    };
    gen_longtail(&balanced)
}

/// OOD generator family. Every mode is structurally disjoint from the inlier
/// generators: different support, different shift, or reserved pattern
/// indices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OodMode {
    /// Uniform on the unit hypercube `[0,1)^d`.
    Uniform,
    /// One isotropic Gaussian cluster at radius [`OOD_SHIFT_RADIUS`].
    ShiftedGaussian,
    /// Grid patterns drawn from `[first_index, first_index + num_patterns)`,
    /// rendered like inlier grid images. Keep `first_index` at or above the
    /// inlier class count (and ranges disjoint between OOD train and test).
    HeldOutPatterns { first_index: u64, num_patterns: u64 },
}

/// Generate an unlabeled OOD set. Deterministic per `(mode, seed)`.
pub fn gen_ood(count: usize, dim: usize, mode: OodMode, seed: u64) -> Result<SampleSet> {
    if count == 0 {
        return Err(Error::Config("gen_ood needs count >= 1".into()));
    }
    let mut rng = stream(seed, salt::OOD_SAMPLES);
    let mut samples = Vec::with_capacity(count);
    match mode {
        OodMode::Uniform => {
            for id in 0..count {
                samples.push(Sample {
                    id: id as u64,
                    label: -1,
                    values: (0..dim).map(|_| rng.gen::<f64>()).collect(),
                });
            }
        }
        OodMode::ShiftedGaussian => {
            let mean: Vec<f64> = unit_direction(&mut rng, dim)
                .into_iter()
                .map(|x| x * OOD_SHIFT_RADIUS)
                .collect();
            for id in 0..count {
                samples.push(Sample {
                    id: id as u64,
                    label: -1,
                    values: mean
                        .iter()
                        .map(|m| m + rng.sample::<f64, _>(StandardNormal) * CLUSTER_SIGMA)
                        .collect(),
                });
            }
        }
        OodMode::HeldOutPatterns {
            first_index,
            num_patterns,
        } => {
            if num_patterns == 0 {
                return Err(Error::Config(
                    "held-out-patterns needs num_patterns >= 1".into(),
                ));
            }
            let side = grid_side(dim)?;
            let indices = draw_pattern_indices(first_index, num_patterns, count, &mut rng);
            for (id, idx) in indices.into_iter().enumerate() {
                let pattern = grid_pattern(idx, side, side);
                samples.push(Sample {
                    id: id as u64,
                    label: -1,
                    values: render_grid_sample(&pattern, &mut rng),
                });
            }
        }
    }
    Ok(SampleSet { dim, samples })
}

/// Pattern indices used by held-out OOD generation; always within
/// `[first, first + num)`.
pub fn draw_pattern_indices(first: u64, num: u64, count: usize, rng: &mut impl Rng) -> Vec<u64> {
    (0..count).map(|_| first + rng.gen_range(0..num)).collect()
}

/// Deterministically shuffle sample indices (Fisher–Yates on a ChaCha stream).
pub fn shuffled_indices(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = stream_indexed(seed, salt::SHUFFLE, epoch);
    idx.shuffle(&mut rng);
    idx
}

// ── CSV persistence ──────────────────────────────────────────────────

/// Format a float with 17 significant digits so the value round-trips
/// exactly through text.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn sample_header(dim: usize) -> String {
    let mut h = String::from("id,label");
    for i in 0..dim {
        let _ = write!(h, ",w{i}");
    }
    h
}

/// Write a sample set as CSV: header `id,label,w0,...`, label −1 for OOD.
pub fn write_samples_csv(set: &SampleSet, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(&sample_header(set.dim));
    out.push('\n');
    for s in &set.samples {
        let _ = write!(out, "{},{}", s.id, s.label);
        for v in &s.values {
            let _ = write!(out, ",{}", format_f64(*v));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Read a sample-set CSV. The header row is mandatory and pins the
/// dimensionality; ragged rows and non-numeric cells fail with the offending
/// 1-based line number.
pub fn read_samples_csv(path: &Path) -> Result<SampleSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "missing header row"))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 2 || cols[0] != "id" || cols[1] != "label" {
        return Err(Error::parse(path, 1, "header must start with id,label"));
    }
    let dim = cols.len() - 2;
    for (i, c) in cols.iter().skip(2).enumerate() {
        if *c != format!("w{i}") {
            return Err(Error::parse(
                path,
                1,
                format!("expected header column w{i}, found {c:?}"),
            ));
        }
    }
    let mut samples = Vec::new();
    for (lineno0, line) in lines {
        let lineno = lineno0 + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 2 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected {} fields, found {}", dim + 2, fields.len()),
            ));
        }
        let id: u64 = fields[0]
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad id {:?}", fields[0])))?;
        let label: i64 = fields[1]
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad label {:?}", fields[1])))?;
        let mut values = Vec::with_capacity(dim);
        for f in &fields[2..] {
            let v: f64 = f
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("non-numeric cell {f:?}")))?;
            if !v.is_finite() {
                return Err(Error::parse(path, lineno, format!("non-finite cell {f:?}")));
            }
            values.push(v);
        }
        samples.push(Sample { id, label, values });
    }
    Ok(SampleSet { dim, samples })
}
