//! Explains a trained model with exact TreeSHAP: global importance, a
//! dependence series and a single-company waterfall.

use ratemill::explain::{dependence_data, summary_stats, waterfall_data};
use ratemill::pipeline::{attach_labels, ingest_labeled, run_all, PipelineConfig};
use ratemill::synth::{generate, GeneratorConfig};

fn main() -> ratemill::Result<()> {
    let data = generate(&GeneratorConfig { n_companies: 8000, seed: 6, ..Default::default() })?;
    let labels: Vec<_> = data.truth.iter().map(|t| (t.company_id.clone(), t.reference_date, t.target)).collect();
    let (records, _) = attach_labels(data.bureau, &labels);
    let cfg = PipelineConfig::default();
    let split = ingest_labeled(records, 0, &data.prior, &cfg, 6)?.split;
    let run = run_all(&split, &cfg, 6)?;

    let m = run.bundle.matrix(&split.test_oot)?;
    let summary = summary_stats(&run.bundle.model, &m)?;
    println!("base value (margin) {:.4}", summary.base_value);
    for &j in summary.ranking.iter().take(8) {
        println!("{:<36} {:.4}", summary.feature_names[j], summary.mean_abs[j]);
    }

    let top = &summary.feature_names[summary.ranking[0]];
    let second = &summary.feature_names[summary.ranking[1]];
    let points = dependence_data(&run.bundle.model, &m, top, second)?;
    println!("dependence of {top} coloured by {second}: {} points", points.len());

    let w = waterfall_data(&run.bundle.model, m.row(0), 6)?;
    println!("waterfall for {}: p={:.4}", m.row_ids[0], w.probability);
    for e in &w.entries {
        println!("  {:<34} {:+.4}", e.name, e.contribution);
    }
    Ok(())
}
