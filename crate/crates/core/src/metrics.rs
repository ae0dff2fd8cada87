//! Detection and classification evaluation: AUROC, AUPR, FPR@TPRn, ACC@TPRn,
//! ACC@FPRn, and the combined correct-retention count, each paired with a
//! brute-force oracle twin in [`oracle`].
//!
//! Conventions: OOD is the positive class and higher scores mean more OOD.
//! Scores equal to a threshold count as detected-OOD. External interfaces
//! take percentages as fractions in `[0, 1]`.

use crate::datasets::format_f64;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

/// One evaluation row. `pred`/`label` are `None` for OOD records (and may be
/// absent on external inlier score files; accuracy metrics then fail with a
/// contract violation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub id: u64,
    pub is_ood: bool,
    pub score: f64,
    pub pred: Option<usize>,
    pub label: Option<usize>,
}

/// Slack for mapping a decimal operating point n to an integer count of a
/// population of size N: binary floats make 0.9·10 land just above 9, which
/// would off-by-one the order statistic. Shared by the sweep implementations
/// and the oracles (it is part of the metric definition).
const POINT_SLACK: f64 = 1e-9;

/// Smallest count m with m/total ≥ n.
fn count_at_least(n: f64, total: usize) -> usize {
    (n * total as f64 - POINT_SLACK).ceil().max(0.0) as usize
}

/// Largest count m with m/total ≤ n.
fn count_at_most(n: f64, total: usize) -> usize {
    ((n * total as f64 + POINT_SLACK).floor().max(0.0) as usize).min(total)
}

fn split_scores(records: &[ScoreRecord]) -> Result<(Vec<f64>, Vec<f64>)> {
    if let Some(r) = records.iter().find(|r| !r.score.is_finite()) {
        return Err(Error::Numeric {
            op: "metrics",
            detail: format!("record {} has non-finite score", r.id),
        });
    }
    let ood: Vec<f64> = records
        .iter()
        .filter(|r| r.is_ood)
        .map(|r| r.score)
        .collect();
    let inl: Vec<f64> = records
        .iter()
        .filter(|r| !r.is_ood)
        .map(|r| r.score)
        .collect();
    if ood.is_empty() || inl.is_empty() {
        return Err(Error::UndefinedMetric(
            "need at least one OOD and one inlier record".into(),
        ));
    }
    Ok((ood, inl))
}

fn sort_desc(v: &mut [f64]) {
    v.sort_by(|a, b| b.partial_cmp(a).expect("scores are finite"));
}

/// Descending merge of all scores tagged with is_ood, grouped by value.
fn desc_groups(ood: &[f64], inl: &[f64]) -> Vec<(f64, u64, u64)> {
    let mut all: Vec<(f64, bool)> = ood
        .iter()
        .map(|&s| (s, true))
        .chain(inl.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("scores are finite"));
    let mut groups = Vec::new();
    let mut i = 0;
    while i < all.len() {
        let s = all[i].0;
        let (mut d_ood, mut d_in) = (0u64, 0u64);
        while i < all.len() && all[i].0 == s {
            if all[i].1 {
                d_ood += 1;
            } else {
                d_in += 1;
            }
            i += 1;
        }
        groups.push((s, d_ood, d_in));
    }
    groups
}

/// AUROC by threshold sweep with trapezoids. Ties contribute half, so the
/// value equals the pairwise Mann–Whitney statistic exactly.
pub fn auroc(records: &[ScoreRecord]) -> Result<f64> {
    let (ood, inl) = split_scores(records)?;
    let mut tp = 0u64;
    let mut num2 = 0u64;
    for (_, d_ood, d_in) in desc_groups(&ood, &inl) {
        num2 += d_in * (2 * tp + d_ood);
        tp += d_ood;
    }
    Ok(num2 as f64 / (2.0 * ood.len() as f64 * inl.len() as f64))
}

/// Average precision: step-interpolated Σ precision·Δrecall over a
/// descending-score sweep.
pub fn aupr(records: &[ScoreRecord]) -> Result<f64> {
    let (ood, inl) = split_scores(records)?;
    let p_total = ood.len() as f64;
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut ap = 0.0;
    for (_, d_ood, d_in) in desc_groups(&ood, &inl) {
        tp += d_ood;
        fp += d_in;
        if d_ood > 0 {
            ap += (d_ood as f64 / p_total) * (tp as f64 / (tp + fp) as f64);
        }
    }
    Ok(ap)
}

/// The largest threshold t with `fraction of OOD scores ≥ t` at least n:
/// the ⌈n·N_out⌉-th largest OOD score.
fn tpr_threshold(ood: &[f64], n: f64) -> Result<f64> {
    if !(n > 0.0 && n <= 1.0) {
        return Err(Error::Config(format!(
            "TPR operating point must lie in (0, 1], got {n}"
        )));
    }
    let k = count_at_least(n, ood.len()).max(1);
    let mut sorted = ood.to_vec();
    sort_desc(&mut sorted);
    Ok(sorted[k - 1])
}

/// False-positive rate among inliers at the threshold that detects an `n`
/// fraction of OOD samples.
pub fn fpr_at_tpr(records: &[ScoreRecord], n: f64) -> Result<f64> {
    let (ood, inl) = split_scores(records)?;
    let t = tpr_threshold(&ood, n)?;
    Ok(inl.iter().filter(|&&s| s >= t).count() as f64 / inl.len() as f64)
}

fn accuracy<'a>(records: impl Iterator<Item = &'a ScoreRecord>) -> Result<f64> {
    let (mut total, mut correct) = (0usize, 0usize);
    for r in records {
        let pred = r.pred.ok_or_else(|| {
            Error::Contract(format!("inlier record {} has no predicted class", r.id))
        })?;
        let label = r
            .label
            .ok_or_else(|| Error::Contract(format!("inlier record {} has no true class", r.id)))?;
        total += 1;
        if pred == label {
            correct += 1;
        }
    }
    if total == 0 {
        return Err(Error::UndefinedMetric(
            "no inlier records remain below the threshold".into(),
        ));
    }
    Ok(correct as f64 / total as f64)
}

/// Classification accuracy over the inliers that remain (score below the
/// FPR@TPRn threshold) once an `n` fraction of OOD samples is detected.
pub fn acc_at_tpr(records: &[ScoreRecord], n: f64) -> Result<f64> {
    let (ood, _) = split_scores(records)?;
    let t = tpr_threshold(&ood, n)?;
    accuracy(records.iter().filter(|r| !r.is_ood && r.score < t))
}

/// Classification accuracy over retained inliers when at most an `n`
/// fraction of inliers is flagged as OOD (as many as the budget allows).
/// At n = 0 this is plain accuracy over all inliers.
pub fn acc_at_fpr(records: &[ScoreRecord], n: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&n) {
        return Err(Error::Config(format!(
            "FPR operating point must lie in [0, 1), got {n}"
        )));
    }
    let (_, inl) = split_scores(records)?;
    let max_flag = count_at_most(n, inl.len());
    let mut sorted = inl.clone();
    sort_desc(&mut sorted);
    let mut threshold = f64::INFINITY;
    let mut flagged = 0usize;
    let mut i = 0;
    while i < sorted.len() {
        let s = sorted[i];
        let mut mult = 0usize;
        while i < sorted.len() && sorted[i] == s {
            mult += 1;
            i += 1;
        }
        if flagged + mult > max_flag {
            break;
        }
        flagged += mult;
        threshold = s;
    }
    accuracy(records.iter().filter(|r| !r.is_ood && r.score < threshold))
}

/// Combined measure: `round(N · (1 − fpr95) · acc95)`, the number of
/// retained, correctly classified inliers after filtering 95% of OOD.
pub fn n_correct(n: usize, fpr95: f64, acc95: f64) -> Result<i64> {
    for (name, v) in [("fpr95", fpr95), ("acc95", acc95)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
        }
    }
    Ok((n as f64 * (1.0 - fpr95) * acc95).round() as i64)
}

/// Brute-force oracle twins. Each recomputes its metric by exhaustive
/// enumeration (pairwise counts or full per-threshold recounts) and must
/// agree with the sweep implementations to 1e-12.
pub mod oracle {
    use super::*;

    pub fn auroc(records: &[ScoreRecord]) -> Result<f64> {
        let (ood, inl) = split_scores(records)?;
        let (mut wins, mut ties) = (0u64, 0u64);
        for &o in &ood {
            for &i in &inl {
                if o > i {
                    wins += 1;
                } else if o == i {
                    ties += 1;
                }
            }
        }
        Ok((2 * wins + ties) as f64 / (2.0 * ood.len() as f64 * inl.len() as f64))
    }

    fn distinct_desc(values: impl Iterator<Item = f64>) -> Vec<f64> {
        let mut v: Vec<f64> = values.collect();
        sort_desc(&mut v);
        v.dedup();
        v
    }

    pub fn aupr(records: &[ScoreRecord]) -> Result<f64> {
        let (ood, inl) = split_scores(records)?;
        let thresholds = distinct_desc(ood.iter().chain(inl.iter()).cloned());
        let p_total = ood.len() as f64;
        let mut prev_tp = 0usize;
        let mut ap = 0.0;
        for &t in &thresholds {
            let tp = ood.iter().filter(|&&s| s >= t).count();
            let fp = inl.iter().filter(|&&s| s >= t).count();
            if tp > prev_tp {
                ap += ((tp - prev_tp) as f64 / p_total) * (tp as f64 / (tp + fp) as f64);
                prev_tp = tp;
            }
        }
        Ok(ap)
    }

    /// Largest candidate threshold whose TPR reaches n, by exhaustive scan.
    fn tpr_threshold_exhaustive(ood: &[f64], inl: &[f64], n: f64) -> Result<f64> {
        if !(n > 0.0 && n <= 1.0) {
            return Err(Error::Config(format!(
                "TPR operating point must lie in (0, 1], got {n}"
            )));
        }
        let need = count_at_least(n, ood.len()).max(1);
        for &t in &distinct_desc(ood.iter().chain(inl.iter()).cloned()) {
            if ood.iter().filter(|&&s| s >= t).count() >= need {
                return Ok(t);
            }
        }
        unreachable!("the smallest score detects every OOD sample");
    }

    pub fn fpr_at_tpr(records: &[ScoreRecord], n: f64) -> Result<f64> {
        let (ood, inl) = split_scores(records)?;
        let t = tpr_threshold_exhaustive(&ood, &inl, n)?;
        Ok(inl.iter().filter(|&&s| s >= t).count() as f64 / inl.len() as f64)
    }

    pub fn acc_at_tpr(records: &[ScoreRecord], n: f64) -> Result<f64> {
        let (ood, inl) = split_scores(records)?;
        let t = tpr_threshold_exhaustive(&ood, &inl, n)?;
        super::accuracy(records.iter().filter(|r| !r.is_ood && r.score < t))
    }

    pub fn acc_at_fpr(records: &[ScoreRecord], n: f64) -> Result<f64> {
        if !(0.0..1.0).contains(&n) {
            return Err(Error::Config(format!(
                "FPR operating point must lie in [0, 1), got {n}"
            )));
        }
        let (ood, inl) = split_scores(records)?;
        let max_flag = count_at_most(n, inl.len());
        let mut threshold = f64::INFINITY;
        for &t in &distinct_desc(ood.iter().chain(inl.iter()).cloned()) {
            let flagged = inl.iter().filter(|&&s| s >= t).count();
            if flagged <= max_flag {
                threshold = t;
            } else {
                break;
            }
        }
        super::accuracy(records.iter().filter(|r| !r.is_ood && r.score < threshold))
    }

    pub fn n_correct(n: usize, fpr95: f64, acc95: f64) -> Result<i64> {
        super::n_correct(n, fpr95, acc95)
    }
}

// ── Report ───────────────────────────────────────────────────────────

/// All measures at the requested operating points, plus the 95% block that
/// feeds the combined measure.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub n_in: usize,
    pub n_out: usize,
    pub auroc: f64,
    pub aupr: f64,
    /// `(operating point, value)` pairs, in the configured order.
    pub fpr_at_tpr: Vec<(f64, f64)>,
    pub acc_at_tpr: Vec<(f64, f64)>,
    pub acc_at_fpr: Vec<(f64, f64)>,
    pub fpr95: f64,
    /// Mirrored spelling of the same quantity to avoid sign confusion.
    pub one_minus_fpr95: f64,
    pub acc95: f64,
    pub n_correct: i64,
}

/// Compute every configured measure. The 95% block is always computed, even
/// when 0.95 is not among the requested TPR points.
pub fn compute_report(
    records: &[ScoreRecord],
    tpr_points: &[f64],
    fpr_points: &[f64],
) -> Result<MetricsReport> {
    let (ood, inl) = split_scores(records)?;
    let mut fpr_at = Vec::with_capacity(tpr_points.len());
    let mut acc_at_t = Vec::with_capacity(tpr_points.len());
    for &n in tpr_points {
        fpr_at.push((n, fpr_at_tpr(records, n)?));
        acc_at_t.push((n, acc_at_tpr(records, n)?));
    }
    let mut acc_at_f = Vec::with_capacity(fpr_points.len());
    for &n in fpr_points {
        acc_at_f.push((n, acc_at_fpr(records, n)?));
    }
    let fpr95 = fpr_at_tpr(records, 0.95)?;
    let acc95 = acc_at_tpr(records, 0.95)?;
    Ok(MetricsReport {
        n_in: inl.len(),
        n_out: ood.len(),
        auroc: auroc(records)?,
        aupr: aupr(records)?,
        fpr_at_tpr: fpr_at,
        acc_at_tpr: acc_at_t,
        acc_at_fpr: acc_at_f,
        fpr95,
        one_minus_fpr95: 1.0 - fpr95,
        acc95,
        n_correct: n_correct(inl.len(), fpr95, acc95)?,
    })
}

impl MetricsReport {
    /// Flat `key = value` lines; every configured operating point gets a key.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "n_in = {}", self.n_in);
        let _ = writeln!(out, "n_out = {}", self.n_out);
        let _ = writeln!(out, "auroc = {}", self.auroc);
        let _ = writeln!(out, "aupr = {}", self.aupr);
        for (n, v) in &self.fpr_at_tpr {
            let _ = writeln!(out, "fpr_at_tpr_{n} = {v}");
        }
        for (n, v) in &self.acc_at_tpr {
            let _ = writeln!(out, "acc_at_tpr_{n} = {v}");
        }
        for (n, v) in &self.acc_at_fpr {
            let _ = writeln!(out, "acc_at_fpr_{n} = {v}");
        }
        let _ = writeln!(out, "fpr95 = {}", self.fpr95);
        let _ = writeln!(out, "one_minus_fpr95 = {}", self.one_minus_fpr95);
        let _ = writeln!(out, "acc95 = {}", self.acc95);
        let _ = writeln!(out, "n_correct = {}", self.n_correct);
        out
    }

    /// Every key of the text document, in emission order.
    pub fn keys(&self) -> Vec<String> {
        self.to_text()
            .lines()
            .filter_map(|l| l.split(" = ").next().map(str::to_string))
            .collect()
    }
}

// ── Score CSV ────────────────────────────────────────────────────────

/// Write records as CSV with header `id,is_ood,score,pred,label`; pred and
/// label are empty for OOD rows. Scores carry 17 significant digits so files
/// are byte-stable and lossless.
pub fn write_scores_csv(records: &[ScoreRecord], path: &Path) -> Result<()> {
    let mut out = String::from("id,is_ood,score,pred,label\n");
    for r in records {
        let pred = r.pred.map(|p| p.to_string()).unwrap_or_default();
        let label = r.label.map(|l| l.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.id,
            if r.is_ood { 1 } else { 0 },
            format_f64(r.score),
            pred,
            label
        );
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_scores_csv(path: &Path) -> Result<Vec<ScoreRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "missing header row"))?;
    if header != "id,is_ood,score,pred,label" {
        return Err(Error::parse(
            path,
            1,
            format!("expected header id,is_ood,score,pred,label, found {header:?}"),
        ));
    }
    let mut records = Vec::new();
    for (lineno0, line) in lines {
        let lineno = lineno0 + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected 5 fields, found {}", fields.len()),
            ));
        }
        let id: u64 = fields[0]
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad id {:?}", fields[0])))?;
        let is_ood = match fields[1] {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("is_ood must be 0 or 1, found {other:?}"),
                ))
            }
        };
        let score: f64 = fields[2]
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad score {:?}", fields[2])))?;
        if !score.is_finite() {
            return Err(Error::parse(path, lineno, "non-finite score"));
        }
        let parse_opt = |f: &str, what: &str| -> Result<Option<usize>> {
            if f.is_empty() {
                Ok(None)
            } else {
                f.parse::<usize>()
                    .map(Some)
                    .map_err(|_| Error::parse(path, lineno, format!("bad {what} {f:?}")))
            }
        };
        records.push(ScoreRecord {
            id,
            is_ood,
            score,
            pred: parse_opt(fields[3], "pred")?,
            label: parse_opt(fields[4], "label")?,
        });
    }
    Ok(records)
}
