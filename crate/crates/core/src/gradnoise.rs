//! Executable verification of the gradient-noise identities.
//!
//! For an outlier input with softmax output z̃ and virtual label
//! `j = argmax` over the abstention entries, the virtual-label objective
//! contributes gradient noise `g = −∇_θ z̃_j / z̃_j`; the uniform
//! outlier-exposure objective contributes `g′ = −(1/C) Σ_{j<C} ∇_θ z̃_j / z̃_j`.
//! Both identities are checked coordinate-wise against the reverse-mode
//! gradient of the corresponding loss, computed through the independent
//! fused cross-entropy route. θ is the parameter vector of one classifier:
//! the shared extractor plus one head, in [`ModelParams::flatten_theta`]
//! order; multi-head models are verified head by head.

use crate::losses::{oe_uniform_var, outlier_var};
use crate::model::{ModelParams, ParamVars};
use crate::numerics::{max_rel_err, Tape, Var};
use crate::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

/// Denominator floor for the analytic-vs-autodiff relative error, so dead
/// coordinates compare absolutely.
pub const IDENTITY_REL_FLOOR: f64 = 1e-10;

/// Softmax outputs below this underflow the element-wise division.
pub const UNDERFLOW_LIMIT: f64 = 1e-300;

/// Two noise directions count as differing when their cosine drops below
/// this.
pub const DIRECTION_COSINE_CUTOFF: f64 = 0.99;

/// Per-sample, per-head verification record.
#[derive(Debug, Clone)]
pub struct NoiseReport {
    pub sample: usize,
    pub head: usize,
    pub virtual_label: usize,
    /// Virtual-label noise, length p (extractor + one head).
    pub g: Vec<f64>,
    /// Outlier-exposure noise, length p.
    pub g_prime: Vec<f64>,
    /// Max coordinate-wise relative deviation of `g` from the reverse-mode
    /// gradient of the virtual-label loss.
    pub max_rel_err_g: f64,
    /// Same for `g′` against the outlier-exposure loss.
    pub max_rel_err_gprime: f64,
}

/// Batch-level summary of [`verify_prop1`].
#[derive(Debug, Clone, PartialEq)]
pub struct Prop1Summary {
    pub samples: usize,
    pub heads: usize,
    /// Fraction of same-head sample pairs whose g directions differ
    /// (cosine < [`DIRECTION_COSINE_CUTOFF`]).
    pub g_direction_diversity: f64,
    /// The corresponding fraction for g′ pairs.
    pub gprime_direction_diversity: f64,
    pub max_rel_err_g: f64,
    pub max_rel_err_gprime: f64,
}

struct HeadTape {
    tape: Tape,
    logits: Var,
    theta_vars: Vec<Var>,
}

/// Single-sample forward of one classifier (extractor + one head) on a
/// fresh tape. Leaf order matches [`ModelParams::flatten_theta`].
fn head_forward(params: &ModelParams, head: usize, x: &[f64]) -> Result<HeadTape> {
    if head >= params.heads.len() {
        return Err(Error::Contract(format!(
            "head {head} out of range for m = {}",
            params.heads.len()
        )));
    }
    if x.len() != params.config.input_dim {
        return Err(Error::Contract(format!(
            "input has dim {}, model expects {}",
            x.len(),
            params.config.input_dim
        )));
    }
    let tape = Tape::new();
    let pv = ParamVars {
        w1: tape.leaf(&params.w1),
        b1: tape.leaf(&params.b1),
        w2: tape.leaf(&params.w2),
        b2: tape.leaf(&params.b2),
        heads: vec![(
            tape.leaf(&params.heads[head].w),
            tape.leaf(&params.heads[head].b),
        )],
    };
    let xv = tape.leaf_from(vec![1, x.len()], x.to_vec());
    let a1 = tape.relu(tape.add_row(tape.matmul(xv, pv.w1), pv.b1));
    let a2 = tape.relu(tape.add_row(tape.matmul(a1, pv.w2), pv.b2));
    let logits = tape.add_row(tape.matmul(a2, pv.heads[0].0), pv.heads[0].1);
    let theta_vars = pv.all();
    Ok(HeadTape {
        tape,
        logits,
        theta_vars,
    })
}

fn collect_theta_grad(ht: &HeadTape) -> Vec<f64> {
    let mut g = Vec::new();
    for &v in &ht.theta_vars {
        g.extend(ht.tape.grad(v));
    }
    g
}

/// Analytic virtual-label noise `g = −∇_θ z̃_j / z̃_j` with
/// `j = argmax` over the abstention entries. The gradient of the scalar
/// `z̃_j` is obtained by backpropagating it through the softmax node and
/// scaling by `−1/z̃_j`.
pub fn analytic_noise_virtual(
    params: &ModelParams,
    head: usize,
    x: &[f64],
) -> Result<(Vec<f64>, usize)> {
    let c = params.config.num_classes;
    let k = params.config.abstention;
    if k == 0 {
        return Err(Error::Config(
            "virtual-label noise needs k >= 1 abstention classes".into(),
        ));
    }
    let ht = head_forward(params, head, x)?;
    let z = ht.tape.softmax(ht.logits)?;
    let zv = ht.tape.value(z);
    let mut j = c;
    for idx in c + 1..c + k {
        if zv[idx] > zv[j] {
            j = idx;
        }
    }
    if zv[j] < UNDERFLOW_LIMIT {
        return Err(Error::Numeric {
            op: "analytic_noise_virtual",
            detail: format!("softmax output {} underflows at index {j}", zv[j]),
        });
    }
    let scaled = ht.tape.scale(ht.tape.select(z, j), -1.0 / zv[j]);
    ht.tape.backward(scaled);
    Ok((collect_theta_grad(&ht), j))
}

/// Analytic outlier-exposure noise `g′ = −(1/C) Σ_{j<C} ∇_θ z̃_j / z̃_j`,
/// assembled term by term from softmax components (one backward pass over
/// the summed, value-scaled selections).
pub fn analytic_noise_oe(params: &ModelParams, head: usize, x: &[f64]) -> Result<Vec<f64>> {
    let c = params.config.num_classes;
    let ht = head_forward(params, head, x)?;
    let z = ht.tape.softmax(ht.logits)?;
    let zv = ht.tape.value(z);
    let mut acc: Option<Var> = None;
    for (j, &zj) in zv.iter().enumerate().take(c) {
        if zj < UNDERFLOW_LIMIT {
            return Err(Error::Numeric {
                op: "analytic_noise_oe",
                detail: format!("softmax output {zj} underflows at index {j}"),
            });
        }
        let term = ht.tape.scale(ht.tape.select(z, j), -1.0 / (c as f64 * zj));
        acc = Some(match acc {
            None => term,
            Some(a) => ht.tape.add(a, term),
        });
    }
    let total = acc.expect("C >= 1");
    ht.tape.backward(total);
    Ok(collect_theta_grad(&ht))
}

/// Reverse-mode gradient of the virtual-label loss through the fused
/// cross-entropy route (the path the trainer uses).
pub fn autodiff_outlier_grad(params: &ModelParams, head: usize, x: &[f64]) -> Result<Vec<f64>> {
    let ht = head_forward(params, head, x)?;
    let loss = outlier_var(
        &ht.tape,
        ht.logits,
        params.config.num_classes,
        params.config.abstention,
    )?;
    ht.tape.backward(loss);
    Ok(collect_theta_grad(&ht))
}

/// Reverse-mode gradient of the uniform outlier-exposure loss through the
/// fused cross-entropy route.
pub fn autodiff_oe_grad(params: &ModelParams, head: usize, x: &[f64]) -> Result<Vec<f64>> {
    let ht = head_forward(params, head, x)?;
    let loss = oe_uniform_var(&ht.tape, ht.logits, params.config.num_classes)?;
    ht.tape.backward(loss);
    Ok(collect_theta_grad(&ht))
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na < 1e-30 || nb < 1e-30 {
        return 1.0;
    }
    dot / (na * nb)
}

/// Verify both identities on every (sample, head) pair of an outlier batch
/// and summarize how diverse the noise directions are within the batch.
pub fn verify_prop1(
    params: &ModelParams,
    batch: &[Vec<f64>],
) -> Result<(Vec<NoiseReport>, Prop1Summary)> {
    if batch.is_empty() {
        return Err(Error::Contract(
            "verify_prop1 needs a nonempty batch".into(),
        ));
    }
    let annotate = |err: Error, sample: usize, head: usize| match err {
        Error::Numeric { op, detail } => Error::Numeric {
            op,
            detail: format!("sample {sample}, head {head}: {detail}"),
        },
        other => other,
    };
    let mut reports = Vec::new();
    for head in 0..params.heads.len() {
        for (i, x) in batch.iter().enumerate() {
            let (g, j) =
                analytic_noise_virtual(params, head, x).map_err(|e| annotate(e, i, head))?;
            let g_auto =
                autodiff_outlier_grad(params, head, x).map_err(|e| annotate(e, i, head))?;
            let gp = analytic_noise_oe(params, head, x).map_err(|e| annotate(e, i, head))?;
            let gp_auto = autodiff_oe_grad(params, head, x).map_err(|e| annotate(e, i, head))?;
            reports.push(NoiseReport {
                sample: i,
                head,
                virtual_label: j,
                max_rel_err_g: max_rel_err(&g, &g_auto, IDENTITY_REL_FLOOR),
                max_rel_err_gprime: max_rel_err(&gp, &gp_auto, IDENTITY_REL_FLOOR),
                g,
                g_prime: gp,
            });
        }
    }
    let mut pairs = 0usize;
    let (mut g_diff, mut gp_diff) = (0usize, 0usize);
    for head in 0..params.heads.len() {
        let head_reports: Vec<&NoiseReport> = reports.iter().filter(|r| r.head == head).collect();
        for a in 0..head_reports.len() {
            for b in a + 1..head_reports.len() {
                pairs += 1;
                if cosine(&head_reports[a].g, &head_reports[b].g) < DIRECTION_COSINE_CUTOFF {
                    g_diff += 1;
                }
                if cosine(&head_reports[a].g_prime, &head_reports[b].g_prime)
                    < DIRECTION_COSINE_CUTOFF
                {
                    gp_diff += 1;
                }
            }
        }
    }
    let frac = |n: usize| {
        if pairs == 0 {
            0.0
        } else {
            n as f64 / pairs as f64
        }
    };
    let summary = Prop1Summary {
        samples: batch.len(),
        heads: params.heads.len(),
        g_direction_diversity: frac(g_diff),
        gprime_direction_diversity: frac(gp_diff),
        max_rel_err_g: reports.iter().map(|r| r.max_rel_err_g).fold(0.0, f64::max),
        max_rel_err_gprime: reports
            .iter()
            .map(|r| r.max_rel_err_gprime)
            .fold(0.0, f64::max),
    };
    Ok((reports, summary))
}

/// CSV of per-sample maxima: `sample,head,virtual_label,max_rel_err_g,max_rel_err_gprime`.
pub fn write_noise_csv(reports: &[NoiseReport], path: &Path) -> Result<()> {
    let mut out = String::from("sample,head,virtual_label,max_rel_err_g,max_rel_err_gprime\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.sample,
            r.head,
            r.virtual_label,
            crate::datasets::format_f64(r.max_rel_err_g),
            crate::datasets::format_f64(r.max_rel_err_gprime)
        );
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

impl Prop1Summary {
    /// One-line report: the direction-diversity statistic plus worst errors.
    pub fn report_line(&self) -> String {
        format!(
            "prop1: samples={} heads={} g_direction_diversity={:.4} \
             gprime_direction_diversity={:.4} max_rel_err_g={:.3e} max_rel_err_gprime={:.3e}",
            self.samples,
            self.heads,
            self.g_direction_diversity,
            self.gprime_direction_diversity,
            self.max_rel_err_g,
            self.max_rel_err_gprime
        )
    }
}
