//! Labels, filters and splits a cohort into train, out-of-sample and
//! out-of-time sets.

use ratemill::pipeline::{attach_labels, ingest_labeled, PipelineConfig};
use ratemill::synth::{generate, GeneratorConfig};

fn main() -> ratemill::Result<()> {
    let data = generate(&GeneratorConfig { n_companies: 5000, seed: 3, ..Default::default() })?;
    let labels: Vec<_> = data.truth.iter().map(|t| (t.company_id.clone(), t.reference_date, t.target)).collect();
    let (records, unlabeled) = attach_labels(data.bureau, &labels);
    let cfg = PipelineConfig::default();
    let out = ingest_labeled(records, unlabeled, &data.prior, &cfg, 3)?;
    println!("{}", serde_json::to_string_pretty(&out.filter)?);
    println!("{}", serde_json::to_string_pretty(&out.split.manifest(cfg.oos_fraction))?);
    Ok(())
}
