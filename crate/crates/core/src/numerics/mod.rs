//! Dense tensor arithmetic, reverse-mode gradients, and the independent
//! finite-difference gradient oracle.

mod tape;
mod tensor;

pub use tape::{Tape, Var};
pub use tensor::Tensor;

use crate::{Error, Result};

/// Numerically stable primitives shared by the value-level loss functions and
/// the tape's fused ops.
pub(crate) mod stable {
    /// log Σ exp(x_i), max-subtracted.
    pub fn logsumexp(x: &[f64]) -> f64 {
        let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = x.iter().map(|v| (v - m).exp()).sum();
        m + s.ln()
    }

    /// softmax(x), max-subtracted.
    pub fn softmax_slice(x: &[f64]) -> Vec<f64> {
        let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / s).collect()
    }
}

/// Softmax of a rank-1 tensor. Max-subtracted for stability; errors on
/// non-finite input.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    if logits.rank() != 1 || logits.is_empty() {
        return Err(Error::Contract(format!(
            "softmax expects a nonempty rank-1 tensor, got shape {:?}",
            logits.shape()
        )));
    }
    if let Some(i) = logits.first_non_finite() {
        return Err(Error::Numeric {
            op: "softmax",
            detail: format!("non-finite logit at index {i}"),
        });
    }
    Ok(Tensor::from_vec(stable::softmax_slice(logits.data())))
}

/// Smallest and largest admissible finite-difference step.
pub const FD_EPS_MIN: f64 = 1e-8;
pub const FD_EPS_MAX: f64 = 1e-4;

/// Central-difference gradient of a scalar function of a parameter tensor.
/// Serves as the independent oracle for every reverse-mode gradient in the
/// crate. Errors carry the flat index of the probe that failed.
pub fn finite_diff_grad<F>(mut f: F, params: &Tensor, eps: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if !(FD_EPS_MIN..=FD_EPS_MAX).contains(&eps) {
        return Err(Error::Config(format!(
            "finite-difference eps {eps} outside [{FD_EPS_MIN}, {FD_EPS_MAX}]"
        )));
    }
    let mut grad = vec![0.0; params.len()];
    let mut probe = params.clone();
    for (i, g) in grad.iter_mut().enumerate() {
        let orig = params.data()[i];
        probe.data_mut()[i] = orig + eps;
        let fp = f(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let fm = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Oracle { probe: i });
        }
        *g = (fp - fm) / (2.0 * eps);
    }
    Tensor::new(params.shape().to_vec(), grad)
}

/// Element-wise relative error between two gradient vectors, with a floor on
/// the denominator so dead coordinates compare absolutely.
pub fn max_rel_err(analytic: &[f64], other: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), other.len());
    analytic
        .iter()
        .zip(other)
        .map(|(a, b)| (a - b).abs() / a.abs().max(floor))
        .fold(0.0, f64::max)
}
