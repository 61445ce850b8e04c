//! End-to-end scoring pipeline: ingest, features, training, calibration,
//! master scale and out-of-time validation.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::booster::{self, tune_with, HyperParams, SearchSpace, TreeEnsembleModel, TuneResult};
use crate::calibration::{brier, brier_skill, fit_beta, reliability, CalibrationMap, ReliabilityTable};
use crate::data::{
    filter_population, label_panel, split_with_fraction, CompanySnapshot, FilterReport, LabeledRecord,
    PriorStatus, SplitDataset, TargetRule, OOS_FRACTION,
};
use crate::error::{invalid, Error, Result};
use crate::features::{FeatureConfig, FeatureMatrix, Featurizer};
use crate::metrics::{auc, evaluate_scores, f_beta, MetricReport, DEFAULT_BETA};
use crate::rating::{de_bin, validate_scale, BinningConfig, ClassValidation, RatingScale, TrafficLight, ValidationConfig};

/// When a validated scale counts as failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScalePolicy {
    pub fail_on_binomial: bool,
    pub fail_on_red: bool,
}

impl Default for ScalePolicy {
    fn default() -> Self {
        ScalePolicy {
            fail_on_binomial: true,
            fail_on_red: false,
        }
    }
}

impl ScalePolicy {
    pub fn passes(&self, rows: &[ClassValidation]) -> bool {
        !rows.iter().any(|r| {
            (self.fail_on_binomial && r.failed())
                || (self.fail_on_red && r.traffic_light == Some(TrafficLight::Red))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub features: FeatureConfig,
    pub params: HyperParams,
    /// Random-search trials; 0 trains `params` directly.
    pub tune_budget: usize,
    pub search: SearchSpace,
    pub binning: BinningConfig,
    pub validation: ValidationConfig,
    pub policy: ScalePolicy,
    /// Decision threshold on the raw score; `None` picks the F-beta optimum.
    pub threshold: Option<f64>,
    pub beta: f64,
    pub target_rule: TargetRule,
    pub oos_fraction: f64,
    pub reliability_bins: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            features: FeatureConfig::default(),
            params: HyperParams::default(),
            tune_budget: 0,
            search: SearchSpace::default(),
            binning: BinningConfig::default(),
            validation: ValidationConfig::default(),
            policy: ScalePolicy::default(),
            threshold: None,
            beta: DEFAULT_BETA,
            target_rule: TargetRule::default(),
            oos_fraction: OOS_FRACTION,
            reliability_bins: 10,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(invalid(format!("beta {} must be finite and non-negative", self.beta)));
        }
        if let Some(t) = self.threshold {
            if !(t > 0.0 && t < 1.0) {
                return Err(invalid(format!("threshold {t} outside (0,1)")));
            }
        }
        if self.reliability_bins < 2 {
            return Err(invalid("at least two reliability bins required"));
        }
        Ok(())
    }
}

/// Everything needed to score raw snapshots: the fitted features, the
/// ensemble, the optional calibration map and the decision threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringBundle {
    #[serde(flatten)]
    pub model: TreeEnsembleModel,
    pub calibration: Option<CalibrationMap>,
    pub featurizer: Featurizer,
    pub threshold: f64,
}

impl ScoringBundle {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn matrix(&self, records: &[LabeledRecord]) -> Result<FeatureMatrix> {
        self.featurizer.transform(records)
    }

    /// Uncalibrated default probabilities.
    pub fn raw_scores(&self, records: &[LabeledRecord]) -> Result<Vec<f64>> {
        self.model.predict_proba(&self.matrix(records)?)
    }

    /// Calibrated PDs; raw scores when no map is attached.
    pub fn pds(&self, records: &[LabeledRecord]) -> Result<Vec<f64>> {
        let raw = self.raw_scores(records)?;
        Ok(match &self.calibration {
            Some(c) => c.apply_all(&raw),
            None => raw,
        })
    }

    pub fn score_snapshots(&self, snapshots: &[CompanySnapshot]) -> Result<Vec<f64>> {
        self.raw_scores(&unlabeled(snapshots))
    }

    pub fn pd_snapshots(&self, snapshots: &[CompanySnapshot]) -> Result<Vec<f64>> {
        self.pds(&unlabeled(snapshots))
    }
}

fn unlabeled(snapshots: &[CompanySnapshot]) -> Vec<LabeledRecord> {
    snapshots.iter().map(|s| LabeledRecord::new(s.clone(), 0)).collect()
}

pub fn targets(records: &[LabeledRecord]) -> Vec<u8> {
    records.iter().map(|r| r.target).collect()
}

/// Threshold with the highest F-beta over specificity and recall, scoring
/// `score >= t` as a default. Ties keep the highest threshold.
pub fn select_threshold(scores: &[f64], targets: &[u8], beta: f64) -> Result<f64> {
    if scores.len() != targets.len() || scores.is_empty() {
        return Err(invalid("scores and targets must be non-empty and equal in length"));
    }
    let pos = targets.iter().filter(|&&t| t == 1).count();
    let neg = targets.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Degenerate("threshold selection needs both classes".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut best = (f64::NEG_INFINITY, 0.5);
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            if targets[idx[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let t = s.clamp(1e-12, 1.0 - 1e-12);
        let f = f_beta((neg - fp) as f64 / neg as f64, tp as f64 / pos as f64, beta);
        if f > best.0 {
            best = (f, t);
        }
    }
    Ok(best.1)
}

/// Attaches labels from `(company_id, reference_date, target)` rows.
/// Snapshots without a label are dropped and counted.
pub fn attach_labels(
    snapshots: Vec<CompanySnapshot>,
    labels: &[(String, crate::data::YearMonth, u8)],
) -> (Vec<LabeledRecord>, usize) {
    let map: HashMap<(&str, crate::data::YearMonth), u8> =
        labels.iter().map(|(id, d, t)| ((id.as_str(), *d), *t)).collect();
    let mut unlabeled = 0;
    let out = snapshots
        .into_iter()
        .filter_map(|s| match map.get(&(s.company_id.as_str(), s.reference_date)) {
            Some(&t) => Some(LabeledRecord::new(s, t)),
            None => {
                unlabeled += 1;
                None
            }
        })
        .collect();
    (out, unlabeled)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestOutcome {
    pub split: SplitDataset,
    pub filter: FilterReport,
    /// Panel rows skipped for an incomplete horizon, or snapshots without a label.
    pub unlabeled: usize,
}

/// Labels a monthly panel, filters the population and splits.
pub fn ingest_panel(
    rows: &[CompanySnapshot],
    reference_month: Option<u8>,
    prior: &PriorStatus,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<IngestOutcome> {
    let (records, skipped) = label_panel(rows, reference_month, &cfg.target_rule)?;
    ingest_labeled(records, skipped, prior, cfg, seed)
}

pub fn ingest_labeled(
    records: Vec<LabeledRecord>,
    unlabeled: usize,
    prior: &PriorStatus,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<IngestOutcome> {
    let (kept, filter) = filter_population(records, prior);
    let split = split_with_fraction(kept, seed, cfg.oos_fraction)?;
    Ok(IngestOutcome { split, filter, unlabeled })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub bundle: ScoringBundle,
    pub tuning: Option<TuneResult>,
    pub train_metrics: MetricReport,
}

/// Fits the ensemble on `train` with an already fitted featurizer.
pub fn train(featurizer: Featurizer, train: &[LabeledRecord], cfg: &PipelineConfig, seed: u64) -> Result<TrainOutcome> {
    cfg.validate()?;
    let m = featurizer.transform(train)?;
    let (params, tuning) = if cfg.tune_budget > 0 {
        let t = tune_with(&m, &cfg.params, &cfg.search, cfg.tune_budget, seed, cfg.beta)?;
        (t.best.clone(), Some(t))
    } else {
        (cfg.params.clone(), None)
    };
    let model = booster::fit(&m, &params, seed)?;
    let scores = model.predict_proba(&m)?;
    let threshold = match cfg.threshold {
        Some(t) => t,
        None => select_threshold(&scores, &m.target, cfg.beta)?,
    };
    let train_metrics = evaluate_scores(&scores, &m.target, threshold, cfg.beta)?;
    Ok(TrainOutcome {
        bundle: ScoringBundle {
            model,
            calibration: None,
            featurizer,
            threshold,
        },
        tuning,
        train_metrics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub map: CalibrationMap,
    pub n: usize,
    pub brier_before: f64,
    pub brier_after: f64,
    pub skill_before: f64,
    pub skill_after: f64,
    pub auc_before: f64,
    pub auc_after: f64,
    pub reliability_before: ReliabilityTable,
    pub reliability_after: ReliabilityTable,
}

/// Fits a beta map on held-out records and attaches it to the bundle.
/// With an automatic threshold the threshold is re-selected on the same
/// held-out raw scores.
pub fn calibrate(bundle: &mut ScoringBundle, holdout: &[LabeledRecord], cfg: &PipelineConfig) -> Result<CalibrationReport> {
    let raw = bundle.raw_scores(holdout)?;
    let y = targets(holdout);
    let map = fit_beta(&raw, &y)?;
    let cal = map.apply_all(&raw);
    if cfg.threshold.is_none() {
        bundle.threshold = select_threshold(&raw, &y, cfg.beta)?;
    }
    bundle.calibration = Some(map.clone());
    Ok(CalibrationReport {
        map,
        n: raw.len(),
        brier_before: brier(&raw, &y)?,
        brier_after: brier(&cal, &y)?,
        skill_before: brier_skill(&raw, &y)?,
        skill_after: brier_skill(&cal, &y)?,
        auc_before: auc(&raw, &y)?,
        auc_after: auc(&cal, &y)?,
        reliability_before: reliability(&raw, &y, cfg.reliability_bins)?,
        reliability_after: reliability(&cal, &y, cfg.reliability_bins)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleValidation {
    pub classes: Vec<ClassValidation>,
    pub passed: bool,
}

pub fn validate(scale: &RatingScale, pds: &[f64], targets: &[u8], cfg: &PipelineConfig) -> Result<ScaleValidation> {
    let classes = validate_scale(scale, pds, targets, &cfg.validation)?;
    let passed = cfg.policy.passes(&classes);
    Ok(ScaleValidation { classes, passed })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineRun {
    pub bundle: ScoringBundle,
    pub tuning: Option<TuneResult>,
    pub calibration: CalibrationReport,
    pub scale: RatingScale,
    pub oos: MetricReport,
    pub oot: MetricReport,
    pub validation: ScaleValidation,
}

/// Features and model on train, calibration and scale on the in-time
/// holdout, evaluation and scale validation on the out-of-time vintage.
pub fn run_all(split: &SplitDataset, cfg: &PipelineConfig, seed: u64) -> Result<PipelineRun> {
    cfg.validate()?;
    let featurizer = Featurizer::fit(&split.train, &cfg.features, seed)?;
    let TrainOutcome { mut bundle, tuning, .. } = train(featurizer, &split.train, cfg, seed)?;
    let calibration = calibrate(&mut bundle, &split.test_oos, cfg)?;

    let oos_raw = bundle.raw_scores(&split.test_oos)?;
    let oos_y = targets(&split.test_oos);
    let oos = evaluate_scores(&oos_raw, &oos_y, bundle.threshold, cfg.beta)?;
    let oos_pd = calibration.map.apply_all(&oos_raw);
    let scale = de_bin(&oos_pd, &oos_y, &cfg.binning, seed)?;

    let oot_raw = bundle.raw_scores(&split.test_oot)?;
    let oot_y = targets(&split.test_oot);
    let oot = evaluate_scores(&oot_raw, &oot_y, bundle.threshold, cfg.beta)?;
    let validation = validate(&scale, &calibration.map.apply_all(&oot_raw), &oot_y, cfg)?;
    Ok(PipelineRun {
        bundle,
        tuning,
        calibration,
        scale,
        oos,
        oot,
        validation,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Digest256 {
    pub path: PathBuf,
    pub sha256: String,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Provenance of one command invocation, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub inputs: Vec<Digest256>,
    pub seed: u64,
    pub version: String,
    /// Seconds since the Unix epoch when the manifest was written.
    pub wall_clock: u64,
    pub outputs: Vec<Digest256>,
}

impl RunManifest {
    pub fn new(command: &str, config_json: &str, seed: u64) -> Self {
        RunManifest {
            command: command.to_string(),
            config_hash: sha256_bytes(config_json.as_bytes()),
            inputs: Vec::new(),
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_clock: 0,
            outputs: Vec::new(),
        }
    }

    fn digest_all(paths: &[PathBuf]) -> Result<Vec<Digest256>> {
        let mut out = Vec::new();
        for p in paths {
            if p.is_dir() {
                let mut entries: Vec<PathBuf> = std::fs::read_dir(p)?
                    .map(|e| e.map(|e| e.path()))
                    .collect::<std::io::Result<_>>()?;
                entries.sort();
                for e in entries.into_iter().filter(|e| e.is_file()) {
                    out.push(Digest256 { sha256: sha256_file(&e)?, path: e });
                }
            } else {
                out.push(Digest256 { sha256: sha256_file(p)?, path: p.clone() });
            }
        }
        Ok(out)
    }

    pub fn with_inputs(mut self, paths: &[PathBuf]) -> Result<Self> {
        self.inputs = Self::digest_all(paths)?;
        Ok(self)
    }

    pub fn with_outputs(mut self, paths: &[PathBuf]) -> Result<Self> {
        self.outputs = Self::digest_all(paths)?;
        Ok(self)
    }

    /// Stamps the wall clock and writes the manifest as pretty JSON.
    pub fn write(mut self, path: &Path) -> Result<()> {
        self.wall_clock = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        std::fs::write(path, serde_json::to_string_pretty(&self)?)?;
        Ok(())
    }
}
