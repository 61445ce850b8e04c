//! Trains on one cohort and backtests the model on a second cohort whose
//! targets are derived from monthly status histories.

use ratemill::pipeline::{attach_labels, ingest_labeled, run_all, PipelineConfig};
use ratemill::stats::backtest;
use ratemill::synth::{generate, GeneratorConfig};

fn main() -> ratemill::Result<()> {
    let cfg = PipelineConfig::default();
    let data = generate(&GeneratorConfig { n_companies: 8000, seed: 10, ..Default::default() })?;
    let labels: Vec<_> = data.truth.iter().map(|t| (t.company_id.clone(), t.reference_date, t.target)).collect();
    let (records, _) = attach_labels(data.bureau, &labels);
    let split = ingest_labeled(records, 0, &data.prior, &cfg, 10)?.split;
    let run = run_all(&split, &cfg, 10)?;

    let fresh = generate(&GeneratorConfig { n_companies: 3000, seed: 99, emit_cr: true, ..Default::default() })?;
    let report = backtest(&fresh.bureau, &fresh.statuses, &cfg.target_rule, run.bundle.threshold, cfg.beta, |s| {
        run.bundle.score_snapshots(s)
    })?;
    println!("excluded for incomplete horizons: {}", report.excluded.len());
    println!("{}", serde_json::to_string_pretty(&report.metrics)?);
    Ok(())
}
