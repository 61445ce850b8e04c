//! Command-line front end. Every artifact-producing command writes a
//! `*.manifest.json` next to its outputs.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::crbridge::{
    build_histories, map_to_features, read_lines_csv, read_phenomena_csv, unmapped_lines, write_lines_csv,
    write_phenomena_csv, Lookups, MappingConfig,
};
use crate::data::{
    read_labeled_csv, read_prior_csv, read_snapshot_csv, write_labeled_csv, write_prior_csv, write_snapshot_csv,
    CompanySnapshot, LabeledRecord, YearMonth,
};
use crate::error::{invalid, Error, Result};
use crate::explain::{dependence_data, summary_stats, waterfall_data, write_dependence_csv, write_importance_csv, write_summary_csv};
use crate::features::Featurizer;
use crate::pipeline::{
    attach_labels, calibrate, ingest_labeled, ingest_panel, train, validate, PipelineConfig, RunManifest, ScoringBundle,
};
use crate::rating::{de_bin, write_validation_csv, RatingScale};
use crate::stats::{
    backtest, pair_snapshots, read_pairs_csv, read_status_csv, run_battery, write_report_csv, write_status_csv, Battery,
    Decision,
};
use crate::synth::{generate, write_truth_csv, GeneratorConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "ratemill", version, about = "Behavioral credit-risk rating pipeline")]
pub struct Cli {
    /// Seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Increase log verbosity (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// Pipeline configuration JSON; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic bureau panel, labels and register histories.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label, filter and split a snapshot file.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        /// Labels as company_id,reference_date,target; without it the input
        /// is treated as a monthly panel and labeled from its own horizon.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        prior: PathBuf,
        /// Reference month for panel labeling (1-12); any month when omitted.
        #[arg(long)]
        reference_month: Option<u8>,
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the feature pipeline on the training split.
    Features {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the boosted classifier.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Fitted featurizer; defaults to featurizer.json in the data directory.
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long, alias = "tune-budget")]
        budget: Option<usize>,
        #[arg(long)]
        beta: Option<f64>,
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a beta calibration map on held-out data.
    Calibrate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score snapshots or labeled records.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        scale: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a master scale on scored records.
    Bins {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Test a master scale on out-of-time scores.
    ValidateScale {
        #[arg(long)]
        scale: PathBuf,
        #[arg(long)]
        oot: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export SHAP summary, importance, dependence and waterfall data.
    Explain {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        row: Option<String>,
        #[arg(long, default_value_t = 10)]
        top: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Map credit-register histories onto the snapshot schema.
    MapCr {
        #[arg(long)]
        lines: PathBuf,
        #[arg(long)]
        phenomena: PathBuf,
        #[arg(long)]
        lookups: PathBuf,
        /// Mapping thresholds and phenomenon codes as JSON.
        #[arg(long)]
        mapping: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Paired tests of mapped against native features.
    ValidateMapping {
        #[arg(long, conflicts_with_all = ["bureau", "mapped"])]
        pairs: Option<PathBuf>,
        #[arg(long, requires = "mapped")]
        bureau: Option<PathBuf>,
        #[arg(long, requires = "bureau")]
        mapped: Option<PathBuf>,
        #[arg(long)]
        battery: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label a mapped cohort from its horizon statuses and score it.
    Backtest {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        snapshots: PathBuf,
        #[arg(long)]
        statuses: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// One scored record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub company_id: String,
    pub reference_date: YearMonth,
    pub target: Option<u8>,
    pub score: f64,
    pub pd: f64,
    pub class: Option<String>,
}

pub fn read_scores_csv(path: &Path) -> Result<Vec<ScoreRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn write_scores_csv(path: &Path, rows: &[ScoreRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// PDs and targets of scored rows; every row must carry a target.
pub fn labeled_pds(rows: &[ScoreRow]) -> Result<(Vec<f64>, Vec<u8>)> {
    rows.iter()
        .map(|r| {
            r.target
                .map(|t| (r.pd, t))
                .ok_or_else(|| invalid(format!("{}: scores file lacks a target", r.company_id)))
        })
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().unzip())
}

#[derive(Debug, Clone, Deserialize)]
struct LabelRow {
    company_id: String,
    reference_date: YearMonth,
    target: u8,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(v)?)?;
    Ok(())
}

fn load_config(arg: &ConfigArg) -> Result<PipelineConfig> {
    let cfg: PipelineConfig = match &arg.config {
        Some(p) => read_json(p)?,
        None => PipelineConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn config_json<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string(v)?)
}

fn manifest_path(out: &Path) -> PathBuf {
    if out.is_dir() {
        out.join("manifest.json")
    } else {
        let name = out.file_stem().and_then(|s| s.to_str()).unwrap_or("output");
        out.with_file_name(format!("{name}.manifest.json"))
    }
}

fn finish(command: &str, cfg: &str, seed: u64, inputs: &[PathBuf], outputs: &[PathBuf], at: &Path) -> Result<()> {
    RunManifest::new(command, cfg, seed)
        .with_inputs(inputs)?
        .with_outputs(outputs)?
        .write(&manifest_path(at))
}

/// Records from a CSV that may or may not carry a target column.
fn read_records(path: &Path) -> Result<(Vec<LabeledRecord>, bool)> {
    let mut r = csv::Reader::from_path(path)?;
    let labeled = r.headers()?.iter().any(|h| h == "target");
    if labeled {
        Ok((read_labeled_csv(path)?.0, true))
    } else {
        let (snaps, _) = read_snapshot_csv(path)?;
        Ok((snaps.into_iter().map(|s| LabeledRecord::new(s, 0)).collect(), false))
    }
}

/// Outcome of a command that completed without an error.
enum Outcome {
    Ok,
    ValidationFailed,
}

fn cmd_synth(config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<Outcome> {
    let mut cfg: GeneratorConfig = match config {
        Some(p) => read_json(p)?,
        None => GeneratorConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let data = generate(&cfg)?;
    std::fs::create_dir_all(out)?;
    write_snapshot_csv(&out.join("snapshots.csv"), &data.bureau)?;
    write_truth_csv(&out.join("labels.csv"), &data.truth)?;
    write_prior_csv(&out.join("prior.csv"), &data.prior)?;
    if cfg.emit_cr {
        write_lines_csv(&out.join("cr_lines.csv"), &data.cr_lines)?;
        write_phenomena_csv(&out.join("phenomena.csv"), &data.phenomena)?;
        data.lookups.write_dir(&out.join("lookups"))?;
        write_status_csv(&out.join("statuses.csv"), &data.statuses)?;
    }
    write_json(&out.join("generator.json"), &cfg)?;
    log::info!("synth: {} companies written to {}", data.bureau.len(), out.display());
    let inputs: Vec<PathBuf> = config.map(Path::to_path_buf).into_iter().collect();
    finish("synth", &config_json(&cfg)?, cfg.seed, &inputs, &[out.to_path_buf()], out)?;
    Ok(Outcome::Ok)
}

#[derive(Serialize)]
struct IngestSummary<'a> {
    filter: &'a crate::data::FilterReport,
    unlabeled: usize,
}

fn cmd_ingest(
    input: &Path,
    labels: Option<&Path>,
    prior: &Path,
    reference_month: Option<u8>,
    config: &ConfigArg,
    out: &Path,
    seed: u64,
) -> Result<Outcome> {
    let cfg = load_config(config)?;
    let prior_status = read_prior_csv(prior)?;
    let (snaps, report) = read_snapshot_csv(input)?;
    let outcome = match labels {
        Some(lp) => {
            let rows: Vec<(String, YearMonth, u8)> = {
                let mut r = csv::Reader::from_path(lp)?;
                r.deserialize::<LabelRow>()
                    .map(|row| row.map(|l| (l.company_id, l.reference_date, l.target)).map_err(Error::from))
                    .collect::<Result<_>>()?
            };
            let (records, unlabeled) = attach_labels(snaps, &rows);
            ingest_labeled(records, unlabeled, &prior_status, &cfg, seed)?
        }
        None => ingest_panel(&snaps, reference_month, &prior_status, &cfg, seed)?,
    };
    std::fs::create_dir_all(out)?;
    let split = &outcome.split;
    write_labeled_csv(&out.join("train.csv"), &split.train)?;
    write_labeled_csv(&out.join("test_oos.csv"), &split.test_oos)?;
    write_labeled_csv(&out.join("test_oot.csv"), &split.test_oot)?;
    write_json(&out.join("split_manifest.json"), &split.manifest(cfg.oos_fraction))?;
    write_json(&out.join("missing_cells.json"), &report)?;
    write_json(
        &out.join("ingest_report.json"),
        &IngestSummary {
            filter: &outcome.filter,
            unlabeled: outcome.unlabeled,
        },
    )?;
    let mut inputs = vec![input.to_path_buf(), prior.to_path_buf()];
    inputs.extend(labels.map(Path::to_path_buf));
    inputs.extend(config.config.clone());
    let outputs: Vec<PathBuf> = ["train.csv", "test_oos.csv", "test_oot.csv", "split_manifest.json", "ingest_report.json"]
        .iter()
        .map(|f| out.join(f))
        .collect();
    finish("ingest", &config_json(&cfg)?, seed, &inputs, &outputs, out)?;
    Ok(Outcome::Ok)
}

fn cmd_features(input: &Path, config: &ConfigArg, out: &Path, seed: u64) -> Result<Outcome> {
    let cfg = load_config(config)?;
    let train_path = input.join("train.csv");
    let (train, _) = read_labeled_csv(&train_path)?;
    let f = Featurizer::fit(&train, &cfg.features, seed)?;
    std::fs::create_dir_all(out)?;
    let path = out.join("featurizer.json");
    write_json(&path, &f)?;
    log::info!("features: {} columns kept", f.columns.len());
    let mut inputs = vec![train_path];
    inputs.extend(config.config.clone());
    finish("features", &config_json(&cfg.features)?, seed, &inputs, &[path], out)?;
    Ok(Outcome::Ok)
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    data: &Path,
    features: Option<&Path>,
    budget: Option<usize>,
    beta: Option<f64>,
    config: &ConfigArg,
    out: &Path,
    seed: u64,
) -> Result<Outcome> {
    let mut cfg = load_config(config)?;
    if let Some(b) = budget {
        cfg.tune_budget = b;
    }
    if let Some(b) = beta {
        cfg.beta = b;
    }
    let train_path = data.join("train.csv");
    let (records, _) = read_labeled_csv(&train_path)?;
    let mut inputs = vec![train_path];
    let feat_path = features.map(Path::to_path_buf).unwrap_or_else(|| data.join("featurizer.json"));
    let featurizer = if feat_path.exists() {
        inputs.push(feat_path.clone());
        read_json(&feat_path)?
    } else {
        log::info!("train: no featurizer at {}, fitting one", feat_path.display());
        Featurizer::fit(&records, &cfg.features, seed)?
    };
    let outcome = train(featurizer, &records, &cfg, seed)?;
    outcome.bundle.write(out)?;
    let report = out.with_file_name(format!(
        "{}.train_report.json",
        out.file_stem().and_then(|s| s.to_str()).unwrap_or("model")
    ));
    #[derive(Serialize)]
    struct TrainReport<'a> {
        train_metrics: &'a crate::metrics::MetricReport,
        tuning: &'a Option<crate::booster::TuneResult>,
    }
    write_json(
        &report,
        &TrainReport {
            train_metrics: &outcome.train_metrics,
            tuning: &outcome.tuning,
        },
    )?;
    inputs.extend(config.config.clone());
    finish("train", &config_json(&cfg)?, seed, &inputs, &[out.to_path_buf(), report], out)?;
    Ok(Outcome::Ok)
}

fn cmd_calibrate(model: &Path, data: &Path, config: &ConfigArg, out: &Path, seed: u64) -> Result<Outcome> {
    let cfg = load_config(config)?;
    let mut bundle = ScoringBundle::read(model)?;
    let (holdout, _) = read_labeled_csv(data)?;
    let report = calibrate(&mut bundle, &holdout, &cfg)?;
    bundle.write(out)?;
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    let before = out.with_file_name(format!("{stem}.reliability_before.csv"));
    let after = out.with_file_name(format!("{stem}.reliability_after.csv"));
    let rep = out.with_file_name(format!("{stem}.calibration.json"));
    crate::calibration::write_reliability_csv(&before, &report.reliability_before)?;
    crate::calibration::write_reliability_csv(&after, &report.reliability_after)?;
    write_json(&rep, &report)?;
    log::info!(
        "calibrate: brier {:.5} -> {:.5}, auc {:.4}",
        report.brier_before,
        report.brier_after,
        report.auc_after
    );
    let mut inputs = vec![model.to_path_buf(), data.to_path_buf()];
    inputs.extend(config.config.clone());
    finish("calibrate", &config_json(&cfg)?, seed, &inputs, &[out.to_path_buf(), before, after, rep], out)?;
    Ok(Outcome::Ok)
}

fn cmd_score(model: &Path, input: &Path, scale_path: Option<&Path>, out: &Path, seed: u64) -> Result<Outcome> {
    let bundle = ScoringBundle::read(model)?;
    let scale: Option<RatingScale> = scale_path.map(read_json).transpose()?;
    let (records, labeled) = read_records(input)?;
    let raw = bundle.raw_scores(&records)?;
    let pds = match &bundle.calibration {
        Some(c) => c.apply_all(&raw),
        None => raw.clone(),
    };
    let rows: Vec<ScoreRow> = records
        .iter()
        .zip(raw.iter().zip(&pds))
        .map(|(r, (&score, &pd))| ScoreRow {
            company_id: r.snapshot.company_id.clone(),
            reference_date: r.snapshot.reference_date,
            target: labeled.then_some(r.target),
            score,
            pd,
            class: scale.as_ref().map(|s| s.labels[s.assign(pd)].clone()),
        })
        .collect();
    write_scores_csv(out, &rows)?;
    let mut inputs = vec![model.to_path_buf(), input.to_path_buf()];
    inputs.extend(scale_path.map(Path::to_path_buf));
    finish("score", "", seed, &inputs, &[out.to_path_buf()], out)?;
    Ok(Outcome::Ok)
}

fn cmd_bins(scores: &Path, k: Option<usize>, config: &ConfigArg, out: &Path, seed: u64) -> Result<Outcome> {
    let mut cfg = load_config(config)?;
    if let Some(k) = k {
        cfg.binning.k = k;
    }
    let rows = read_scores_csv(scores)?;
    let (pds, targets) = labeled_pds(&rows)?;
    let scale = de_bin(&pds, &targets, &cfg.binning, seed)?;
    write_json(out, &scale)?;
    let mut inputs = vec![scores.to_path_buf()];
    inputs.extend(config.config.clone());
    finish("bins", &config_json(&cfg.binning)?, seed, &inputs, &[out.to_path_buf()], out)?;
    Ok(Outcome::Ok)
}

fn cmd_validate_scale(scale: &Path, oot: &Path, config: &ConfigArg, out: Option<&Path>, seed: u64) -> Result<Outcome> {
    let cfg = load_config(config)?;
    let s: RatingScale = read_json(scale)?;
    let rows = read_scores_csv(oot)?;
    let (pds, targets) = labeled_pds(&rows)?;
    let v = validate(&s, &pds, &targets, &cfg)?;
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| {
        let stem = scale.file_stem().and_then(|s| s.to_str()).unwrap_or("scale");
        scale.with_file_name(format!("{stem}.validation.csv"))
    });
    write_validation_csv(&out, &v.classes)?;
    for c in &v.classes {
        println!(
            "{}\tpd={:.5}\tn={}\td={}\tp={}\t{}",
            c.label,
            c.class_pd,
            c.count,
            c.defaults,
            c.binomial_p.map(|p| format!("{p:.4}")).unwrap_or_else(|| "-".into()),
            c.traffic_light.map(|t| t.to_string()).unwrap_or_else(|| "-".into()),
        );
    }
    let mut inputs = vec![scale.to_path_buf(), oot.to_path_buf()];
    inputs.extend(config.config.clone());
    finish("validate-scale", &config_json(&(&cfg.validation, &cfg.policy))?, seed, &inputs, std::slice::from_ref(&out), &out)?;
    if v.passed {
        Ok(Outcome::Ok)
    } else {
        log::error!("validate-scale: scale failed the validation policy");
        Ok(Outcome::ValidationFailed)
    }
}

fn cmd_explain(model: &Path, input: &Path, row: Option<&str>, top: usize, out: &Path, seed: u64) -> Result<Outcome> {
    let bundle = ScoringBundle::read(model)?;
    let (records, _) = read_records(input)?;
    let m = bundle.matrix(&records)?;
    let summary = summary_stats(&bundle.model, &m)?;
    std::fs::create_dir_all(out)?;
    let mut outputs = vec![out.join("shap_summary.csv"), out.join("importance.csv")];
    write_summary_csv(&outputs[0], &summary, &m.row_ids)?;
    write_importance_csv(&outputs[1], &summary)?;
    if let Some(&first) = summary.ranking.first() {
        let second = summary.ranking.get(1).copied().unwrap_or(first);
        let f = &summary.feature_names[first];
        let c = &summary.feature_names[second];
        let path = out.join(format!("dependence_{f}.csv"));
        write_dependence_csv(&path, &dependence_data(&bundle.model, &m, f, c)?)?;
        outputs.push(path);
    }
    if let Some(id) = row {
        let i = m
            .row_ids
            .iter()
            .position(|r| r == id)
            .ok_or_else(|| invalid(format!("row {id} not found in {}", input.display())))?;
        let path = out.join(format!("waterfall_{id}.json"));
        write_json(&path, &waterfall_data(&bundle.model, m.row(i), top)?)?;
        outputs.push(path);
    }
    finish("explain", "", seed, &[model.to_path_buf(), input.to_path_buf()], &outputs, out)?;
    Ok(Outcome::Ok)
}

#[derive(Serialize)]
struct MapReport {
    mapped: usize,
    insufficient_history: Vec<(String, Vec<String>)>,
    unmapped_lines: usize,
    /// Features derived from status buckets rather than reported days.
    proxy_features: Vec<&'static str>,
}

fn cmd_map_cr(lines: &Path, phenomena: &Path, lookups: &Path, mapping: Option<&Path>, out: &Path, seed: u64) -> Result<Outcome> {
    let cfg: MappingConfig = match mapping {
        Some(p) => read_json(p)?,
        None => MappingConfig::default(),
    };
    let l = read_lines_csv(lines)?;
    let ph = read_phenomena_csv(phenomena)?;
    let lk = Lookups::read_dir(lookups)?;
    let histories = build_histories(l, &ph)?;
    let mut snaps = Vec::new();
    let mut short = Vec::new();
    for h in &histories {
        match map_to_features(h, &lk, &cfg) {
            Ok(s) => snaps.push(s),
            Err(Error::InsufficientHistory(f)) => short.push((h.company_id.clone(), f)),
            Err(e) => return Err(e),
        }
    }
    if snaps.is_empty() {
        return Err(invalid("no company has enough register history to map"));
    }
    write_snapshot_csv(out, &snaps)?;
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("snapshots");
    let audit = out.with_file_name(format!("{stem}.unmapped_lines.csv"));
    let unmapped: Vec<_> = histories.iter().flat_map(unmapped_lines).collect();
    write_lines_csv(&audit, unmapped.iter().copied())?;
    let report = out.with_file_name(format!("{stem}.mapping_report.json"));
    if !short.is_empty() {
        log::warn!("map-cr: {} companies lack the history for lookback features", short.len());
    }
    write_json(
        &report,
        &MapReport {
            mapped: snaps.len(),
            insufficient_history: short,
            unmapped_lines: unmapped.len(),
            proxy_features: crate::crbridge::PROXY_FEATURES.to_vec(),
        },
    )?;
    let mut inputs = vec![lines.to_path_buf(), phenomena.to_path_buf(), lookups.to_path_buf()];
    inputs.extend(mapping.map(Path::to_path_buf));
    finish("map-cr", &config_json(&cfg)?, seed, &inputs, &[out.to_path_buf(), audit, report], out)?;
    Ok(Outcome::Ok)
}

fn cmd_validate_mapping(
    pairs: Option<&Path>,
    bureau: Option<&Path>,
    mapped: Option<&Path>,
    battery: Option<&Path>,
    out: &Path,
    seed: u64,
) -> Result<Outcome> {
    let b: Battery = match battery {
        Some(p) => read_json(p)?,
        None => Battery::default(),
    };
    let mut inputs: Vec<PathBuf> = battery.map(Path::to_path_buf).into_iter().collect();
    let rows = match (pairs, bureau, mapped) {
        (Some(p), _, _) => {
            inputs.push(p.to_path_buf());
            read_pairs_csv(p)?
        }
        (None, Some(bp), Some(mp)) => {
            inputs.extend([bp.to_path_buf(), mp.to_path_buf()]);
            let (bs, _) = read_snapshot_csv(bp)?;
            let (ms, _) = read_snapshot_csv(mp)?;
            let features: Vec<String> = b.tests.iter().map(|t| t.feature.clone()).collect();
            pair_snapshots(&bs, &ms, &features)?
        }
        _ => return Err(invalid("validate-mapping needs --pairs or both --bureau and --mapped")),
    };
    let reports = run_battery(&rows, &b)?;
    write_report_csv(out, &reports)?;
    for r in &reports {
        println!(
            "{}\tp={:e}\tadj={:e}\t{:?}",
            r.name,
            r.p_raw,
            r.p_adjusted.unwrap_or(f64::NAN),
            r.decision
        );
    }
    finish("validate-mapping", &config_json(&b)?, seed, &inputs, &[out.to_path_buf()], out)?;
    if reports.iter().all(|r| r.decision == Decision::RejectNull) {
        Ok(Outcome::Ok)
    } else {
        log::error!("validate-mapping: at least one null hypothesis was not rejected");
        Ok(Outcome::ValidationFailed)
    }
}

fn cmd_backtest(model: &Path, snapshots: &Path, statuses: &Path, config: &ConfigArg, out: Option<&Path>, seed: u64) -> Result<Outcome> {
    let cfg = load_config(config)?;
    let bundle = ScoringBundle::read(model)?;
    let (snaps, _) = read_snapshot_csv(snapshots)?;
    let st = read_status_csv(statuses)?;
    let report = backtest(&snaps, &st, &cfg.target_rule, bundle.threshold, cfg.beta, |s: &[CompanySnapshot]| {
        bundle.score_snapshots(s)
    })?;
    let json = serde_json::to_string_pretty(&report)?;
    println!("{json}");
    let mut inputs = vec![model.to_path_buf(), snapshots.to_path_buf(), statuses.to_path_buf()];
    inputs.extend(config.config.clone());
    if let Some(o) = out {
        std::fs::write(o, &json)?;
        finish("backtest", &config_json(&cfg)?, seed, &inputs, &[o.to_path_buf()], o)?;
    }
    Ok(Outcome::Ok)
}

fn dispatch(cli: Cli) -> Result<Outcome> {
    let seed = cli.seed;
    match cli.command {
        Command::Synth { config, out } => cmd_synth(config.as_deref(), &out, Some(seed)),
        Command::Ingest {
            input,
            labels,
            prior,
            reference_month,
            config,
            out,
        } => cmd_ingest(&input, labels.as_deref(), &prior, reference_month, &config, &out, seed),
        Command::Features { input, config, out } => cmd_features(&input, &config, &out, seed),
        Command::Train {
            data,
            features,
            budget,
            beta,
            config,
            out,
        } => cmd_train(&data, features.as_deref(), budget, beta, &config, &out, seed),
        Command::Calibrate { model, data, config, out } => cmd_calibrate(&model, &data, &config, &out, seed),
        Command::Score { model, input, scale, out } => cmd_score(&model, &input, scale.as_deref(), &out, seed),
        Command::Bins { scores, k, config, out } => cmd_bins(&scores, k, &config, &out, seed),
        Command::ValidateScale { scale, oot, config, out } => cmd_validate_scale(&scale, &oot, &config, out.as_deref(), seed),
        Command::Explain {
            model,
            input,
            row,
            top,
            out,
        } => cmd_explain(&model, &input, row.as_deref(), top, &out, seed),
        Command::MapCr {
            lines,
            phenomena,
            lookups,
            mapping,
            out,
        } => cmd_map_cr(&lines, &phenomena, &lookups, mapping.as_deref(), &out, seed),
        Command::ValidateMapping {
            pairs,
            bureau,
            mapped,
            battery,
            out,
        } => cmd_validate_mapping(
            pairs.as_deref(),
            bureau.as_deref(),
            mapped.as_deref(),
            battery.as_deref(),
            &out,
            seed,
        ),
        Command::Backtest {
            model,
            snapshots,
            statuses,
            config,
            out,
        } => cmd_backtest(&model, &snapshots, &statuses, &config, out.as_deref(), seed),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::debug!("thread pool already configured: {e}");
        }
    }
    match dispatch(cli) {
        Ok(Outcome::Ok) => EXIT_OK,
        Ok(Outcome::ValidationFailed) => EXIT_VALIDATION,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INPUT
        }
    }
}
