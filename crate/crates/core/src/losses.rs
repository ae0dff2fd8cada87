//! Training objectives: inlier cross-entropy, virtual-label outlier loss,
//! uniform outlier-exposure loss, logit-adjusted loss, and the weighted total.
//!
//! Each loss exists twice: a pure value-level function on tensors, and a tape
//! builder producing a differentiable scalar node. Virtual labels are read
//! from the current logit values and baked into the target distribution, so
//! no gradient flows through the argmax.

use crate::numerics::stable::{logsumexp, softmax_slice};
use crate::numerics::{Tape, Tensor, Var};
use crate::{Error, Result};

/// Strictly positive class priors over the inlier classes, summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPriors {
    pi: Vec<f64>,
}

impl ClassPriors {
    pub fn new(pi: Vec<f64>) -> Result<Self> {
        if pi.is_empty() {
            return Err(Error::Config("class priors must be nonempty".into()));
        }
        if let Some(i) = pi.iter().position(|&p| !p.is_finite() || p <= 0.0) {
            return Err(Error::Config(format!(
                "class prior {} at index {i} is not strictly positive",
                pi[i]
            )));
        }
        let sum: f64 = pi.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "class priors sum to {sum}, expected 1 within 1e-12"
            )));
        }
        Ok(ClassPriors { pi })
    }

    /// Priors from per-class training counts. A zero count is a
    /// configuration error (its log margin would be undefined).
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        if let Some(c) = counts.iter().position(|&n| n == 0) {
            return Err(Error::Config(format!(
                "class {c} has zero training samples; prior undefined"
            )));
        }
        let total: usize = counts.iter().sum();
        ClassPriors::new(counts.iter().map(|&n| n as f64 / total as f64).collect())
    }

    pub fn uniform(num_classes: usize) -> Self {
        ClassPriors {
            pi: vec![1.0 / num_classes as f64; num_classes],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.pi
    }

    pub fn len(&self) -> usize {
        self.pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi.is_empty()
    }

    pub fn log(&self) -> Vec<f64> {
        self.pi.iter().map(|p| p.ln()).collect()
    }
}

pub fn onehot(len: usize, index: usize) -> Vec<f64> {
    let mut t = vec![0.0; len];
    t[index] = 1.0;
    t
}

/// Target distribution that is uniform over the first `c` of `len` classes.
pub fn uniform_target(len: usize, c: usize) -> Vec<f64> {
    let mut t = vec![0.0; len];
    for v in t.iter_mut().take(c) {
        *v = 1.0 / c as f64;
    }
    t
}

fn check_finite(data: &[f64], op: &'static str) -> Result<()> {
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            op,
            detail: format!("non-finite logit at index {i}"),
        });
    }
    Ok(())
}

fn ce_on_slice(logits: &[f64], label: usize) -> f64 {
    logsumexp(logits) - logits[label]
}

fn virtual_label_on_slice(logits: &[f64], num_classes: usize, abstention: usize) -> usize {
    let mut best = num_classes;
    for j in num_classes + 1..num_classes + abstention {
        if logits[j] > logits[best] {
            best = j;
        }
    }
    best
}

/// Standard cross-entropy: `−log softmax(logits)[label]`, equivalently
/// `log(1 + Σ_{y'≠y} exp(f_{y'} − f_y))`.
pub fn ce_loss(logits: &Tensor, label: usize) -> Result<f64> {
    if logits.rank() != 1 {
        return Err(Error::Contract(format!(
            "ce_loss expects rank-1 logits, got shape {:?}",
            logits.shape()
        )));
    }
    check_finite(logits.data(), "ce_loss")?;
    if label >= logits.len() {
        return Err(Error::Contract(format!(
            "label {label} out of range for {} logits",
            logits.len()
        )));
    }
    Ok(ce_on_slice(logits.data(), label))
}

/// Index of the maximal abstention-class logit, in `[C, C+k)`. Ties break
/// toward the lowest index; the inlier logits are never inspected.
pub fn assign_virtual_label(
    logits: &Tensor,
    num_classes: usize,
    abstention: usize,
) -> Result<usize> {
    if abstention == 0 {
        return Err(Error::Config(
            "virtual labels need at least one abstention class (k >= 1)".into(),
        ));
    }
    if logits.len() != num_classes + abstention {
        return Err(Error::Contract(format!(
            "expected {} logits (C={num_classes} + k={abstention}), got {}",
            num_classes + abstention,
            logits.len()
        )));
    }
    check_finite(logits.data(), "assign_virtual_label")?;
    Ok(virtual_label_on_slice(
        logits.data(),
        num_classes,
        abstention,
    ))
}

/// Cross-entropy against the sample's current virtual label. The label is a
/// constant with respect to differentiation.
pub fn outlier_loss(logits: &Tensor, num_classes: usize, abstention: usize) -> Result<f64> {
    let label = assign_virtual_label(logits, num_classes, abstention)?;
    ce_loss(logits, label)
}

/// Cross-entropy of `softmax(logits)` against the uniform distribution over
/// the first `c` classes: `logsumexp(logits) − (1/c)·Σ_{j<c} logits_j`.
pub fn oe_uniform_loss(logits: &Tensor, c: usize) -> Result<f64> {
    if c == 0 {
        return Err(Error::Config("oe_uniform_loss needs C >= 1".into()));
    }
    if logits.rank() != 1 || logits.len() < c {
        return Err(Error::Contract(format!(
            "oe_uniform_loss expects at least {c} rank-1 logits, got shape {:?}",
            logits.shape()
        )));
    }
    check_finite(logits.data(), "oe_uniform_loss")?;
    let mean_first: f64 = logits.data()[..c].iter().sum::<f64>() / c as f64;
    Ok(logsumexp(logits.data()) - mean_first)
}

/// Logit-adjusted cross-entropy: `ce_loss(logits + log π, label)`. With
/// uniform priors this equals `ce_loss` exactly.
pub fn la_loss(logits: &Tensor, label: usize, priors: &ClassPriors) -> Result<f64> {
    if logits.rank() != 1 || logits.len() != priors.len() {
        return Err(Error::Contract(format!(
            "la_loss expects {} rank-1 logits to match the priors, got shape {:?}",
            priors.len(),
            logits.shape()
        )));
    }
    check_finite(logits.data(), "la_loss")?;
    if label >= logits.len() {
        return Err(Error::Contract(format!(
            "label {label} out of range for {} logits",
            logits.len()
        )));
    }
    let shifted: Vec<f64> = logits
        .data()
        .iter()
        .zip(priors.log())
        .map(|(f, lp)| f + lp)
        .collect();
    Ok(ce_on_slice(&shifted, label))
}

/// Per-head logits for the weighted total objective. `outlier` is `None`
/// when the outlier batch is empty (its term is then zero).
#[derive(Debug, Clone)]
pub struct HeadLogits {
    /// `n_in × (C+k)` inlier logits.
    pub inlier: Tensor,
    /// `n_out × (C+k)` outlier logits.
    pub outlier: Option<Tensor>,
}

/// Weighted total objective, summed over heads:
/// `Σ_heads [ (1/n_in)·Σ_i w_i·ce(row_i, y_i) + λ·(1/n_out)·Σ_j outlier_loss(row_j) ]`.
pub fn total_loss(
    heads: &[HeadLogits],
    labels: &[usize],
    weights: &[f64],
    lambda: f64,
    num_classes: usize,
    abstention: usize,
) -> Result<f64> {
    if lambda < 0.0 {
        return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
    }
    if heads.is_empty() {
        return Err(Error::Contract("total_loss needs at least one head".into()));
    }
    let mut total = 0.0;
    for head in heads {
        if head.inlier.is_empty() || labels.is_empty() {
            return Err(Error::Contract("total_loss: empty inlier batch".into()));
        }
        let n_in = head.inlier.rows();
        if labels.len() != n_in || weights.len() != n_in {
            return Err(Error::Contract(format!(
                "total_loss: {n_in} inlier rows but {} labels / {} weights",
                labels.len(),
                weights.len()
            )));
        }
        check_finite(head.inlier.data(), "total_loss")?;
        let cols = head.inlier.cols();
        let mut in_term = 0.0;
        for i in 0..n_in {
            let row = head.inlier.row(i);
            if labels[i] >= cols {
                return Err(Error::Contract(format!(
                    "total_loss: label {} out of range for {cols} logits",
                    labels[i]
                )));
            }
            in_term += weights[i] * ce_on_slice(row, labels[i]);
        }
        in_term /= n_in as f64;

        let mut out_term = 0.0;
        if let Some(outlier) = &head.outlier {
            check_finite(outlier.data(), "total_loss")?;
            let n_out = outlier.rows();
            for j in 0..n_out {
                let row = outlier.row(j);
                if row.len() != num_classes + abstention {
                    return Err(Error::Contract(format!(
                        "total_loss: outlier row width {} != C+k = {}",
                        row.len(),
                        num_classes + abstention
                    )));
                }
                if abstention == 0 {
                    return Err(Error::Config(
                        "total_loss: outlier term needs k >= 1".into(),
                    ));
                }
                let vl = virtual_label_on_slice(row, num_classes, abstention);
                out_term += ce_on_slice(row, vl);
            }
            if n_out > 0 {
                out_term /= n_out as f64;
            }
        }
        total += in_term + lambda * out_term;
    }
    Ok(total)
}

// ── Tape builders ────────────────────────────────────────────────────

/// Cross-entropy of a rank-1 logits node against a fixed label.
pub fn ce_var(tape: &Tape, logits: Var, label: usize) -> Result<Var> {
    let len = tape.shape(logits).iter().product::<usize>();
    if label >= len {
        return Err(Error::Contract(format!(
            "label {label} out of range for {len} logits"
        )));
    }
    tape.cross_entropy_rows(logits, onehot(len, label), vec![1.0], len, 1.0)
}

/// Virtual-label cross-entropy of a rank-1 logits node. The label comes from
/// the node's current value and is constant under differentiation.
pub fn outlier_var(tape: &Tape, logits: Var, num_classes: usize, abstention: usize) -> Result<Var> {
    let values = tape.value(logits);
    let label = assign_virtual_label(&Tensor::from_vec(values), num_classes, abstention)?;
    ce_var(tape, logits, label)
}

/// Uniform outlier-exposure loss of a rank-1 logits node.
pub fn oe_uniform_var(tape: &Tape, logits: Var, c: usize) -> Result<Var> {
    if c == 0 {
        return Err(Error::Config("oe_uniform_var needs C >= 1".into()));
    }
    let len = tape.shape(logits).iter().product::<usize>();
    if len < c {
        return Err(Error::Contract(format!(
            "oe_uniform_var: {len} logits but C = {c}"
        )));
    }
    tape.cross_entropy_rows(logits, uniform_target(len, c), vec![1.0], len, 1.0)
}

/// Logit-adjusted loss of a rank-1 C-wide logits node.
pub fn la_var(tape: &Tape, logits: Var, label: usize, priors: &ClassPriors) -> Result<Var> {
    let len = tape.shape(logits).iter().product::<usize>();
    if len != priors.len() {
        return Err(Error::Contract(format!(
            "la_var: {len} logits but {} priors",
            priors.len()
        )));
    }
    if label >= len {
        return Err(Error::Contract(format!(
            "label {label} out of range for {len} logits"
        )));
    }
    let shift = tape.leaf_from(vec![len], priors.log());
    tape.cross_entropy_rows(
        tape.add(logits, shift),
        onehot(len, label),
        vec![1.0],
        len,
        1.0,
    )
}

/// `(1/n)·Σ_i w_i·ce(row_i, y_i)` over the rows of a batch logits node.
pub fn weighted_ce_rows_var(
    tape: &Tape,
    logits: Var,
    labels: &[usize],
    weights: &[f64],
) -> Result<Var> {
    let shape = tape.shape(logits);
    let (rows, cols) = (shape[0], shape[1]);
    if rows == 0 || labels.len() != rows || weights.len() != rows {
        return Err(Error::Contract(format!(
            "weighted_ce_rows_var: {rows} rows but {} labels / {} weights",
            labels.len(),
            weights.len()
        )));
    }
    let mut targets = vec![0.0; rows * cols];
    for (i, &y) in labels.iter().enumerate() {
        if y >= cols {
            return Err(Error::Contract(format!(
                "label {y} out of range for {cols} logits"
            )));
        }
        targets[i * cols + y] = 1.0;
    }
    let w: Vec<f64> = weights.iter().map(|x| x / rows as f64).collect();
    tape.cross_entropy_rows(logits, targets, w, cols, 1.0)
}

/// Mean virtual-label cross-entropy over the rows of a batch logits node,
/// with per-row virtual labels from the node's current values.
pub fn outlier_rows_var(
    tape: &Tape,
    logits: Var,
    num_classes: usize,
    abstention: usize,
) -> Result<Var> {
    if abstention == 0 {
        return Err(Error::Config("outlier_rows_var needs k >= 1".into()));
    }
    let shape = tape.shape(logits);
    let (rows, cols) = (shape[0], shape[1]);
    if cols != num_classes + abstention {
        return Err(Error::Contract(format!(
            "outlier_rows_var: row width {cols} != C+k = {}",
            num_classes + abstention
        )));
    }
    let values = tape.value(logits);
    let mut targets = vec![0.0; rows * cols];
    for i in 0..rows {
        let row = &values[i * cols..(i + 1) * cols];
        let vl = virtual_label_on_slice(row, num_classes, abstention);
        targets[i * cols + vl] = 1.0;
    }
    let w = vec![1.0 / rows as f64; rows];
    tape.cross_entropy_rows(logits, targets, w, cols, 1.0)
}

/// Mean uniform outlier-exposure loss over the rows of a batch logits node.
pub fn oe_rows_var(tape: &Tape, logits: Var, c: usize) -> Result<Var> {
    if c == 0 {
        return Err(Error::Config("oe_rows_var needs C >= 1".into()));
    }
    let shape = tape.shape(logits);
    let (rows, cols) = (shape[0], shape[1]);
    if cols < c {
        return Err(Error::Contract(format!(
            "oe_rows_var: {cols} logits but C = {c}"
        )));
    }
    let mut targets = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..c {
            targets[i * cols + j] = 1.0 / c as f64;
        }
    }
    let w = vec![1.0 / rows as f64; rows];
    tape.cross_entropy_rows(logits, targets, w, cols, 1.0)
}

/// Mean logit-adjusted loss over batch rows, computed on the first
/// `num_classes` columns of a `C+k`-wide logits node. The abstention columns
/// receive zero gradient.
pub fn la_rows_var(
    tape: &Tape,
    logits: Var,
    labels: &[usize],
    priors: &ClassPriors,
) -> Result<Var> {
    let shape = tape.shape(logits);
    let (rows, cols) = (shape[0], shape[1]);
    let c = priors.len();
    if cols < c {
        return Err(Error::Contract(format!(
            "la_rows_var: {cols} logits but {c} priors"
        )));
    }
    if rows == 0 || labels.len() != rows {
        return Err(Error::Contract(format!(
            "la_rows_var: {rows} rows but {} labels",
            labels.len()
        )));
    }
    let mut shift = priors.log();
    shift.resize(cols, 0.0);
    let shift_var = tape.leaf_from(vec![cols], shift);
    let shifted = tape.add_row(logits, shift_var);
    let mut targets = vec![0.0; rows * c];
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::Contract(format!(
                "label {y} out of range for {c} inlier classes"
            )));
        }
        targets[i * c + y] = 1.0;
    }
    let w = vec![1.0 / rows as f64; rows];
    tape.cross_entropy_rows(shifted, targets, w, c, 1.0)
}

/// Tape form of [`total_loss`]: per head `L_in + λ·L_out`, summed over heads.
pub fn total_var(
    tape: &Tape,
    heads: &[(Var, Option<Var>)],
    labels: &[usize],
    weights: &[f64],
    lambda: f64,
    num_classes: usize,
    abstention: usize,
) -> Result<Var> {
    if lambda < 0.0 {
        return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
    }
    if heads.is_empty() {
        return Err(Error::Contract("total_var needs at least one head".into()));
    }
    let mut acc: Option<Var> = None;
    for &(inlier, outlier) in heads {
        let mut term = weighted_ce_rows_var(tape, inlier, labels, weights)?;
        if let Some(out) = outlier {
            let out_loss = outlier_rows_var(tape, out, num_classes, abstention)?;
            term = tape.add(term, tape.scale(out_loss, lambda));
        }
        acc = Some(match acc {
            None => term,
            Some(a) => tape.add(a, term),
        });
    }
    Ok(acc.expect("at least one head"))
}

/// Softmax probabilities of a logits slice (value-level convenience).
pub fn probs(logits: &[f64]) -> Vec<f64> {
    softmax_slice(logits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, max_rel_err};
    use rand::Rng;

    #[test]
    fn ce_uniform_logits_is_log_n() {
        for t in [-3.0, 0.0, 7.5] {
            let l = Tensor::from_vec(vec![t; 3]);
            let v = ce_loss(&l, 0).unwrap();
            assert!((v - 3.0f64.ln()).abs() < 1e-14);
        }
    }

    #[test]
    fn ce_confident_correct_is_tiny() {
        let v = ce_loss(&Tensor::from_vec(vec![10.0, 0.0]), 0).unwrap();
        let expect = (1.0 + (-10.0f64).exp()).ln();
        assert!((v - expect).abs() < 1e-12);
        assert!(v < 5e-5);
    }

    #[test]
    fn ce_max_logit_label_bounded_by_log_n() {
        let mut rng = crate::rng::stream(11, 0x77);
        for _ in 0..200 {
            let logits: Vec<f64> = (0..6).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let label = logits
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            let v = ce_loss(&Tensor::from_vec(logits), label).unwrap();
            assert!(v < 6.0f64.ln() + 1e-12);
        }
    }

    #[test]
    fn ce_rejects_out_of_range_label() {
        assert!(matches!(
            ce_loss(&Tensor::from_vec(vec![0.0, 0.0]), 2),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn virtual_label_ignores_inlier_logits() {
        let l = Tensor::from_vec(vec![9.0, 9.0, 9.0, 0.1, 0.5, 0.2]);
        assert_eq!(assign_virtual_label(&l, 3, 3).unwrap(), 4);
    }

    #[test]
    fn virtual_label_ties_to_lowest_index() {
        let l = Tensor::from_vec(vec![0.0, 0.0, 1.0, 1.0, 1.0]);
        assert_eq!(assign_virtual_label(&l, 2, 3).unwrap(), 2);
    }

    #[test]
    fn virtual_label_requires_abstention_classes() {
        let l = Tensor::from_vec(vec![0.0, 0.0]);
        assert!(matches!(
            assign_virtual_label(&l, 2, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn virtual_label_always_in_abstention_range() {
        let mut rng = crate::rng::stream(3, 0x99);
        for _ in 0..1000 {
            let logits: Vec<f64> = (0..7).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let vl = assign_virtual_label(&Tensor::from_vec(logits), 4, 3).unwrap();
            assert!((4..7).contains(&vl));
        }
    }

    #[test]
    fn outlier_loss_limits() {
        // dominant abstention logit → near-zero loss (5·e⁻²⁰ ≈ 1.03e-8)
        let l = Tensor::from_vec(vec![0.0, 0.0, 0.0, 0.0, 0.0, 20.0]);
        assert!(outlier_loss(&l, 3, 3).unwrap() < 1e-7);
        // all equal → log(C+k)
        let l = Tensor::from_vec(vec![1.0; 6]);
        assert!((outlier_loss(&l, 3, 3).unwrap() - 6.0f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn oe_uniform_minimum_at_uniform_probs() {
        let c = 4;
        let v = oe_uniform_loss(&Tensor::from_vec(vec![0.5; c]), c).unwrap();
        assert!((v - (c as f64).ln()).abs() < 1e-14);
        let concentrated = oe_uniform_loss(&Tensor::from_vec(vec![5.0, 0.0, 0.0, 0.0]), c).unwrap();
        assert!(concentrated > (c as f64).ln());
    }

    #[test]
    fn virtual_label_invariant_to_inlier_perturbations() {
        let mut rng = crate::rng::stream(13, 0xBE);
        for _ in 0..200 {
            let mut logits: Vec<f64> = (0..7).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let base = assign_virtual_label(&Tensor::from_vec(logits.clone()), 4, 3).unwrap();
            for v in logits.iter_mut().take(4) {
                *v = rng.gen_range(-100.0..100.0);
            }
            let perturbed = assign_virtual_label(&Tensor::from_vec(logits), 4, 3).unwrap();
            assert_eq!(base, perturbed);
        }
    }

    #[test]
    fn la_equals_ce_under_uniform_priors() {
        let priors = ClassPriors::uniform(5);
        let mut rng = crate::rng::stream(5, 0xAB);
        for _ in 0..100 {
            let logits: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let label = rng.gen_range(0..5);
            let t = Tensor::from_vec(logits);
            let a = la_loss(&t, label, &priors).unwrap();
            let b = ce_loss(&t, label).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn la_equals_ce_of_shifted_logits() {
        let priors = ClassPriors::new(vec![0.7, 0.2, 0.1]).unwrap();
        let logits = Tensor::from_vec(vec![0.3, -1.0, 2.0]);
        let shifted = Tensor::from_vec(
            logits
                .data()
                .iter()
                .zip(priors.log())
                .map(|(f, lp)| f + lp)
                .collect(),
        );
        for label in 0..3 {
            let a = la_loss(&logits, label, &priors).unwrap();
            let b = ce_loss(&shifted, label).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn priors_reject_zero_and_bad_sum() {
        assert!(matches!(
            ClassPriors::from_counts(&[3, 0, 2]),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            ClassPriors::new(vec![0.5, 0.4]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn total_loss_matches_hand_summation() {
        // Two inlier samples, one outlier, single head, weights [1, 0.5].
        let inl = Tensor::from_rows(&[vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 2.0, 0.0, 0.0]]).unwrap();
        let out = Tensor::from_rows(&[vec![0.0, 0.0, 3.0, 1.0]]).unwrap();
        let heads = [HeadLogits {
            inlier: inl.clone(),
            outlier: Some(out.clone()),
        }];
        let lambda = 0.05;
        let got = total_loss(&heads, &[0, 1], &[1.0, 0.5], lambda, 2, 2).unwrap();
        let hand_in = (ce_loss(&Tensor::from_vec(inl.row(0).to_vec()), 0).unwrap()
            + 0.5 * ce_loss(&Tensor::from_vec(inl.row(1).to_vec()), 1).unwrap())
            / 2.0;
        let hand_out = outlier_loss(&Tensor::from_vec(out.row(0).to_vec()), 2, 2).unwrap();
        assert!((got - (hand_in + lambda * hand_out)).abs() < 1e-15);
    }

    #[test]
    fn total_loss_lambda_zero_is_pure_inlier_term() {
        let inl = Tensor::from_rows(&[vec![1.0, 0.0, 0.0]]).unwrap();
        let out = Tensor::from_rows(&[vec![0.0, 0.0, 9.0]]).unwrap();
        let with = total_loss(
            &[HeadLogits {
                inlier: inl.clone(),
                outlier: Some(out),
            }],
            &[0],
            &[1.0],
            0.0,
            2,
            1,
        )
        .unwrap();
        let without = total_loss(
            &[HeadLogits {
                inlier: inl,
                outlier: None,
            }],
            &[0],
            &[1.0],
            0.0,
            2,
            1,
        )
        .unwrap();
        assert_eq!(with, without);
    }

    #[test]
    fn total_loss_is_linear_in_lambda() {
        let inl = Tensor::from_rows(&[vec![0.5, -0.5, 0.1, 0.2]]).unwrap();
        let out = Tensor::from_rows(&[vec![0.1, 0.3, -0.2, 0.9]]).unwrap();
        let mk = |lambda| {
            total_loss(
                &[HeadLogits {
                    inlier: inl.clone(),
                    outlier: Some(out.clone()),
                }],
                &[1],
                &[1.0],
                lambda,
                2,
                2,
            )
            .unwrap()
        };
        let base = mk(0.0);
        let l1 = mk(0.3);
        let l2 = mk(0.6);
        assert!(((l2 - base) - 2.0 * (l1 - base)).abs() < 1e-12);
    }

    #[test]
    fn total_loss_rejects_empty_inlier_batch() {
        let out = Tensor::from_rows(&[vec![0.0, 0.0, 1.0]]).unwrap();
        let res = total_loss(
            &[HeadLogits {
                inlier: Tensor::zeros(vec![1, 3]),
                outlier: Some(out),
            }],
            &[],
            &[],
            0.1,
            2,
            1,
        );
        assert!(matches!(res, Err(Error::Contract(_))));
    }

    #[test]
    fn outlier_gradient_is_softmax_minus_onehot() {
        let tape = Tape::new();
        let logits = Tensor::from_vec(vec![0.4, -0.2, 0.1, 0.9, -0.5]);
        let v = tape.leaf(&logits);
        let loss = outlier_var(&tape, v, 3, 2).unwrap();
        tape.backward(loss);
        let vl = assign_virtual_label(&logits, 3, 2).unwrap();
        let p = probs(logits.data());
        let g = tape.grad(v);
        for j in 0..5 {
            let expect = p[j] - if j == vl { 1.0 } else { 0.0 };
            assert!((g[j] - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = crate::rng::stream(17, 0xC0FFEE);
        let priors = ClassPriors::new(vec![0.6, 0.25, 0.15]).unwrap();
        for _ in 0..25 {
            let data: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let t = Tensor::from_vec(data.clone());
            type LossBuilder = Box<dyn Fn(&Tape, Var) -> Var>;
            let cases: Vec<(LossBuilder, &str)> = vec![
                (Box::new(|tp: &Tape, v| ce_var(tp, v, 2).unwrap()), "ce"),
                (
                    Box::new(|tp: &Tape, v| outlier_var(tp, v, 3, 2).unwrap()),
                    "outlier",
                ),
                (
                    Box::new(|tp: &Tape, v| oe_uniform_var(tp, v, 3).unwrap()),
                    "oe",
                ),
            ];
            for (build, name) in cases {
                let tape = Tape::new();
                let v = tape.leaf(&t);
                let loss = build(&tape, v);
                tape.backward(loss);
                let g = tape.grad(v);
                let fd = finite_diff_grad(
                    |p| {
                        let tp = Tape::new();
                        let pv = tp.leaf(p);
                        Ok(tp.scalar(build(&tp, pv)))
                    },
                    &t,
                    1e-5,
                )
                .unwrap();
                let err = max_rel_err(&g, fd.data(), 1e-8);
                assert!(err <= 1e-4, "{name}: rel err {err}");
            }
            let t3 = Tensor::from_vec(data[..3].to_vec());
            let tape = Tape::new();
            let v = tape.leaf(&t3);
            let loss = la_var(&tape, v, 1, &priors).unwrap();
            tape.backward(loss);
            let g = tape.grad(v);
            let priors2 = priors.clone();
            let fd = finite_diff_grad(|p| la_loss(p, 1, &priors2), &t3, 1e-5).unwrap();
            assert!(max_rel_err(&g, fd.data(), 1e-8) <= 1e-4);
        }
    }

    #[test]
    fn la_var_value_matches_la_loss() {
        let priors = ClassPriors::new(vec![0.9, 0.1]).unwrap();
        let logits = Tensor::from_vec(vec![0.0, 0.0]);
        let tape = Tape::new();
        let v = tape.leaf(&logits);
        let loss = la_var(&tape, v, 0, &priors).unwrap();
        assert!((tape.scalar(loss) - la_loss(&logits, 0, &priors).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn outlier_loss_decreases_under_gradient_descent() {
        // Frozen input: descend directly on the logits at lr 1e-2.
        let mut logits = Tensor::from_vec(vec![0.3, -0.1, 0.2, 0.05, -0.3, 0.1]);
        let mut prev = f64::INFINITY;
        for _ in 0..60 {
            let tape = Tape::new();
            let v = tape.leaf(&logits);
            let loss = outlier_var(&tape, v, 3, 3).unwrap();
            let value = tape.scalar(loss);
            assert!(value < prev, "loss did not decrease: {value} >= {prev}");
            prev = value;
            tape.backward(loss);
            let g = tape.grad(v);
            for (x, gv) in logits.data_mut().iter_mut().zip(g) {
                *x -= 1e-2 * gv;
            }
        }
    }
}
