//! Experiment orchestration: configuration file, the file-based pipeline
//! stages (synth → train → score → metrics, plus gradcheck), and seed
//! sweeps with mean ± std aggregation.
//!
//! Stages hand data to each other through files so the metrics engine can
//! also consume externally produced score CSVs.

use crate::datasets::{
    gen_balanced_test, gen_longtail, gen_ood, read_samples_csv, write_samples_csv, Geometry,
    LongTailSpec, OodMode, SampleSet,
};
use crate::gradnoise::{verify_prop1, write_noise_csv, Prop1Summary};
use crate::losses::ClassPriors;
use crate::metrics::{
    compute_report, read_scores_csv, write_scores_csv, MetricsReport, ScoreRecord,
};
use crate::model::{load_checkpoint, save_checkpoint, ModelParams};
use crate::trainer::{finetune_stage2, train_stage1, Method, TrainConfig};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Environment variable naming the default root under which relative output
/// directories are created.
pub const OUTPUT_ROOT_ENV: &str = "LTOOD_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub num_classes: usize,
    pub imbalance_ratio: f64,
    pub head_count: usize,
    pub input_dim: usize,
    pub geometry: Geometry,
    pub seed: u64,
    /// Balanced in-distribution test draw, per class.
    pub test_per_class: usize,
    pub test_seed: u64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            num_classes: 10,
            imbalance_ratio: 100.0,
            head_count: 100,
            input_dim: 64,
            geometry: Geometry::GridImage,
            seed: 7,
            test_per_class: 20,
            test_seed: 7 + TEST_SEED_OFFSET,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OodModeName {
    Uniform,
    ShiftedGaussian,
    HeldOutPatterns,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OodSection {
    pub train_mode: OodModeName,
    pub train_count: usize,
    pub train_seed: u64,
    /// First held-out pattern index for training OOD; defaults to the inlier
    /// class count.
    pub train_first_pattern: Option<u64>,
    pub train_num_patterns: u64,
    pub test_mode: OodModeName,
    pub test_count: usize,
    pub test_seed: u64,
    /// First held-out pattern index for test OOD; defaults to the end of the
    /// training OOD pattern range so the two never overlap.
    pub test_first_pattern: Option<u64>,
    pub test_num_patterns: u64,
}

impl Default for OodSection {
    fn default() -> Self {
        OodSection {
            train_mode: OodModeName::HeldOutPatterns,
            train_count: 600,
            train_seed: 7 + OOD_TRAIN_SEED_OFFSET,
            train_first_pattern: None,
            train_num_patterns: 40,
            test_mode: OodModeName::HeldOutPatterns,
            test_count: 200,
            test_seed: 7 + OOD_TEST_SEED_OFFSET,
            test_first_pattern: None,
            test_num_patterns: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub tpr_points: Vec<f64>,
    pub fpr_points: Vec<f64>,
}

impl Default for MetricsSection {
    fn default() -> Self {
        MetricsSection {
            tpr_points: vec![0.80, 0.90, 0.95, 0.98],
            fpr_points: vec![0.0, 0.001, 0.01, 0.1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: "runs/default".to_string(),
        }
    }
}

const TEST_SEED_OFFSET: u64 = 0x7777;
const OOD_TRAIN_SEED_OFFSET: u64 = 0x3333;
const OOD_TEST_SEED_OFFSET: u64 = 0x5555;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSection,
    pub ood: OodSection,
    pub train: TrainConfig,
    pub metrics: MetricsSection,
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.longtail_spec().validate()?;
        self.train.validate()?;
        if self.dataset.test_per_class == 0 {
            return Err(Error::Config("test_per_class must be positive".into()));
        }
        if self.ood.train_count == 0 || self.ood.test_count == 0 {
            return Err(Error::Config("OOD counts must be positive".into()));
        }
        for &n in &self.metrics.tpr_points {
            if !(n > 0.0 && n <= 1.0) {
                return Err(Error::Config(format!(
                    "TPR operating point {n} outside (0, 1]"
                )));
            }
        }
        for &n in &self.metrics.fpr_points {
            if !(0.0..1.0).contains(&n) {
                return Err(Error::Config(format!(
                    "FPR operating point {n} outside [0, 1)"
                )));
            }
        }
        Ok(())
    }

    /// Re-derive every seed in the config from one base seed; used by the
    /// `--seed` override and the sweep.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.dataset.seed = seed;
        self.dataset.test_seed = seed.wrapping_add(TEST_SEED_OFFSET);
        self.ood.train_seed = seed.wrapping_add(OOD_TRAIN_SEED_OFFSET);
        self.ood.test_seed = seed.wrapping_add(OOD_TEST_SEED_OFFSET);
        self.train.seed = seed;
        self
    }

    pub fn longtail_spec(&self) -> LongTailSpec {
        LongTailSpec {
            num_classes: self.dataset.num_classes,
            imbalance_ratio: self.dataset.imbalance_ratio,
            head_count: self.dataset.head_count,
            input_dim: self.dataset.input_dim,
            geometry: self.dataset.geometry,
            seed: self.dataset.seed,
        }
    }

    fn ood_mode(&self, name: OodModeName, first: Option<u64>, num: u64, is_test: bool) -> OodMode {
        match name {
            OodModeName::Uniform => OodMode::Uniform,
            OodModeName::ShiftedGaussian => OodMode::ShiftedGaussian,
            OodModeName::HeldOutPatterns => {
                let c = self.dataset.num_classes as u64;
                let first_index = first.unwrap_or(if is_test {
                    c + self.ood.train_num_patterns
                } else {
                    c
                });
                OodMode::HeldOutPatterns {
                    first_index,
                    num_patterns: num,
                }
            }
        }
    }

    pub fn ood_train_mode(&self) -> OodMode {
        self.ood_mode(
            self.ood.train_mode,
            self.ood.train_first_pattern,
            self.ood.train_num_patterns,
            false,
        )
    }

    pub fn ood_test_mode(&self) -> OodMode {
        self.ood_mode(
            self.ood.test_mode,
            self.ood.test_first_pattern,
            self.ood.test_num_patterns,
            true,
        )
    }
}

/// Parse and validate a TOML experiment configuration. Unknown keys are
/// rejected.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg: ExperimentConfig = toml::from_str(&text).map_err(|e| {
        let line = e
            .span()
            .map(|s| text[..s.start].lines().count())
            .unwrap_or(0);
        Error::parse(path, line, e.message().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Resolve an output directory: explicit override wins, then the config
/// value; relative paths land under [`OUTPUT_ROOT_ENV`] when it is set.
pub fn resolve_out_dir(cfg: &ExperimentConfig, override_dir: Option<&Path>) -> PathBuf {
    let dir = override_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    if dir.is_relative() {
        if let Ok(root) = std::env::var(OUTPUT_ROOT_ENV) {
            return Path::new(&root).join(dir);
        }
    }
    dir
}

/// File names used by the pipeline inside an output directory.
#[derive(Debug, Clone)]
pub struct DataPaths {
    pub train_in: PathBuf,
    pub test_in: PathBuf,
    pub train_out: PathBuf,
    pub test_out: PathBuf,
}

pub fn data_paths(dir: &Path) -> DataPaths {
    DataPaths {
        train_in: dir.join("train_in.csv"),
        test_in: dir.join("test_in.csv"),
        train_out: dir.join("train_out.csv"),
        test_out: dir.join("test_out.csv"),
    }
}

pub fn checkpoint_path(dir: &Path) -> PathBuf {
    dir.join("checkpoint.json")
}

pub fn scores_path(dir: &Path) -> PathBuf {
    dir.join("scores.csv")
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Synthesize the four dataset files: long-tailed training inliers, a
/// balanced inlier test set, and the OOD training/test sets.
pub fn cmd_synth(cfg: &ExperimentConfig, out_dir: &Path) -> Result<DataPaths> {
    cfg.validate()?;
    ensure_dir(out_dir)?;
    let paths = data_paths(out_dir);
    let spec = cfg.longtail_spec();
    write_samples_csv(&gen_longtail(&spec)?, &paths.train_in)?;
    write_samples_csv(
        &gen_balanced_test(&spec, cfg.dataset.test_per_class, cfg.dataset.test_seed)?,
        &paths.test_in,
    )?;
    write_samples_csv(
        &gen_ood(
            cfg.ood.train_count,
            cfg.dataset.input_dim,
            cfg.ood_train_mode(),
            cfg.ood.train_seed,
        )?,
        &paths.train_out,
    )?;
    write_samples_csv(
        &gen_ood(
            cfg.ood.test_count,
            cfg.dataset.input_dim,
            cfg.ood_test_mode(),
            cfg.ood.test_seed,
        )?,
        &paths.test_out,
    )?;
    Ok(paths)
}

/// Train both stages from the dataset files in `data_dir`; writes the
/// checkpoint and the loss trace into `out_dir` and returns the checkpoint
/// path.
pub fn cmd_train(cfg: &ExperimentConfig, data_dir: &Path, out_dir: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    ensure_dir(out_dir)?;
    let paths = data_paths(data_dir);
    let inliers = read_samples_csv(&paths.train_in)?;
    let outliers = read_samples_csv(&paths.train_out)?;
    let c = cfg.dataset.num_classes;
    let (params, mut trace) = train_stage1(&cfg.train, c, &inliers, &outliers)?;
    let priors = ClassPriors::from_counts(&inliers.class_counts(c)?)?;
    let (params, stage2_trace) = finetune_stage2(&params, &cfg.train, &inliers, &priors)?;
    trace.extend(stage2_trace);
    let ckpt = checkpoint_path(out_dir);
    save_checkpoint(&params, &ckpt)?;
    trace.write_csv(&out_dir.join("loss_trace.csv"))?;
    Ok(ckpt)
}

/// Score the inlier and OOD test files with a trained checkpoint. Produces
/// one record per sample: inliers first (with predictions and labels), then
/// OOD rows with empty prediction/label fields. Record ids are sequential in
/// file order.
pub fn cmd_score(
    method: Method,
    checkpoint: &Path,
    test_in: &Path,
    test_out: &Path,
    out_path: &Path,
) -> Result<()> {
    let params = load_checkpoint(checkpoint)?;
    let inliers = read_samples_csv(test_in)?;
    let outliers = read_samples_csv(test_out)?;
    let records = score_sets(&params, method, &inliers, &outliers)?;
    if let Some(parent) = out_path.parent() {
        ensure_dir(parent)?;
    }
    write_scores_csv(&records, out_path)
}

/// In-memory scoring used by [`cmd_score`] and the sweep.
pub fn score_sets(
    params: &ModelParams,
    method: Method,
    inliers: &SampleSet,
    outliers: &SampleSet,
) -> Result<Vec<ScoreRecord>> {
    let mut records = Vec::with_capacity(inliers.len() + outliers.len());
    let mut next_id = 0u64;
    for s in &inliers.samples {
        if s.label < 0 {
            return Err(Error::Contract(format!(
                "inlier test sample {} is unlabeled",
                s.id
            )));
        }
        records.push(ScoreRecord {
            id: next_id,
            is_ood: false,
            score: method.score(params, &s.values)?,
            pred: Some(params.predict_inlier(&s.values)?),
            label: Some(s.label as usize),
        });
        next_id += 1;
    }
    for s in &outliers.samples {
        records.push(ScoreRecord {
            id: next_id,
            is_ood: true,
            score: method.score(params, &s.values)?,
            pred: None,
            label: None,
        });
        next_id += 1;
    }
    Ok(records)
}

/// Evaluate a score CSV at the configured operating points; writes
/// `report.txt` and `report.json` into `out_dir`.
pub fn cmd_metrics(
    score_csv: &Path,
    tpr_points: &[f64],
    fpr_points: &[f64],
    out_dir: &Path,
) -> Result<MetricsReport> {
    let records = read_scores_csv(score_csv)?;
    let report = compute_report(&records, tpr_points, fpr_points)?;
    ensure_dir(out_dir)?;
    std::fs::write(out_dir.join("report.txt"), report.to_text())
        .map_err(|e| Error::io(out_dir.join("report.txt"), e))?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(out_dir.join("report.json"), json)
        .map_err(|e| Error::io(out_dir.join("report.json"), e))?;
    Ok(report)
}

/// Verify the gradient-noise identities on the samples of an OOD file,
/// using a trained checkpoint or a fresh initialization from the config.
pub fn cmd_gradcheck(
    cfg: &ExperimentConfig,
    checkpoint: Option<&Path>,
    ood_csv: &Path,
    out_csv: &Path,
) -> Result<Prop1Summary> {
    let params = match checkpoint {
        Some(p) => load_checkpoint(p)?,
        None => ModelParams::init(
            cfg.train
                .model_config(cfg.dataset.input_dim, cfg.dataset.num_classes),
            cfg.train.seed,
        )?,
    };
    let set = read_samples_csv(ood_csv)?;
    if set.is_empty() {
        return Err(Error::Contract(
            "gradcheck needs a nonempty OOD file".into(),
        ));
    }
    let batch: Vec<Vec<f64>> = set.samples.iter().map(|s| s.values.clone()).collect();
    let (reports, summary) = verify_prop1(&params, &batch)?;
    if let Some(parent) = out_csv.parent() {
        ensure_dir(parent)?;
    }
    write_noise_csv(&reports, out_csv)?;
    Ok(summary)
}

/// Full pipeline in one directory: synth → train → score → metrics.
pub fn run_pipeline(cfg: &ExperimentConfig, out_dir: &Path) -> Result<MetricsReport> {
    let paths = cmd_synth(cfg, out_dir)?;
    let ckpt = cmd_train(cfg, out_dir, out_dir)?;
    cmd_score(
        cfg.train.method,
        &ckpt,
        &paths.test_in,
        &paths.test_out,
        &scores_path(out_dir),
    )?;
    cmd_metrics(
        &scores_path(out_dir),
        &cfg.metrics.tpr_points,
        &cfg.metrics.fpr_points,
        out_dir,
    )
}

/// Mean ± sample standard deviation of every report key over a seed sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub seeds: Vec<u64>,
    /// `(key, mean, std)` rows in report-key order.
    pub rows: Vec<(String, f64, f64)>,
}

impl MetricsReport {
    /// Numeric key/value pairs in text-report order, for aggregation.
    pub fn flat(&self) -> Vec<(String, f64)> {
        let mut v = vec![
            ("auroc".to_string(), self.auroc),
            ("aupr".to_string(), self.aupr),
        ];
        for (n, x) in &self.fpr_at_tpr {
            v.push((format!("fpr_at_tpr_{n}"), *x));
        }
        for (n, x) in &self.acc_at_tpr {
            v.push((format!("acc_at_tpr_{n}"), *x));
        }
        for (n, x) in &self.acc_at_fpr {
            v.push((format!("acc_at_fpr_{n}"), *x));
        }
        v.push(("fpr95".to_string(), self.fpr95));
        v.push(("one_minus_fpr95".to_string(), self.one_minus_fpr95));
        v.push(("acc95".to_string(), self.acc95));
        v.push(("n_correct".to_string(), self.n_correct as f64));
        v
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Run the full pipeline once per seed (in parallel worker threads, each in
/// its own subdirectory `seed_<s>`) and aggregate every metric.
pub fn cmd_sweep(cfg: &ExperimentConfig, seeds: &[u64], out_dir: &Path) -> Result<SweepReport> {
    if seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one seed".into()));
    }
    cfg.validate()?;
    ensure_dir(out_dir)?;
    let reports: Vec<MetricsReport> = std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&s| {
                let run_cfg = cfg.clone().with_seed(s);
                let dir = out_dir.join(format!("seed_{s}"));
                scope.spawn(move || run_pipeline(&run_cfg, &dir))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep worker panicked"))
            .collect::<Result<Vec<_>>>()
    })?;

    let keys: Vec<String> = reports[0].flat().iter().map(|(k, _)| k.clone()).collect();
    let mut rows = Vec::with_capacity(keys.len());
    for (i, key) in keys.iter().enumerate() {
        let values: Vec<f64> = reports.iter().map(|r| r.flat()[i].1).collect();
        let (mean, std) = mean_std(&values);
        rows.push((key.clone(), mean, std));
    }
    let report = SweepReport {
        seeds: seeds.to_vec(),
        rows,
    };
    let mut text = String::new();
    let _ = writeln!(
        text,
        "seeds = {}",
        report
            .seeds
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(",")
    );
    for (k, mean, std) in &report.rows {
        let _ = writeln!(text, "{k} = {mean} ± {std}");
    }
    std::fs::write(out_dir.join("sweep_report.txt"), text)
        .map_err(|e| Error::io(out_dir.join("sweep_report.txt"), e))?;
    let json = serde_json::to_string_pretty(&report).expect("sweep report serializes");
    std::fs::write(out_dir.join("sweep_report.json"), json)
        .map_err(|e| Error::io(out_dir.join("sweep_report.json"), e))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        std::fs::write(&path, "[dataset]\nnum_classes = 5\nbogus_key = 1\n").unwrap();
        assert!(matches!(load_config(&path), Err(Error::Parse { .. })));
    }

    #[test]
    fn with_seed_rewires_every_stream() {
        let a = ExperimentConfig::default().with_seed(42);
        assert_eq!(a.dataset.seed, 42);
        assert_eq!(a.train.seed, 42);
        assert_ne!(a.dataset.test_seed, a.ood.train_seed);
        assert_ne!(a.ood.train_seed, a.ood.test_seed);
    }

    #[test]
    fn held_out_test_patterns_default_past_training_range() {
        let cfg = ExperimentConfig::default();
        match (cfg.ood_train_mode(), cfg.ood_test_mode()) {
            (
                OodMode::HeldOutPatterns {
                    first_index: tr,
                    num_patterns: trn,
                },
                OodMode::HeldOutPatterns {
                    first_index: te, ..
                },
            ) => {
                assert_eq!(tr, cfg.dataset.num_classes as u64);
                assert_eq!(te, tr + trn);
            }
            other => panic!("unexpected modes {other:?}"),
        }
    }

    #[test]
    fn mean_std_of_single_value_is_zero() {
        let (mean, std) = mean_std(&[0.75]);
        assert_eq!(mean, 0.75);
        assert_eq!(std, 0.0);
    }
}
