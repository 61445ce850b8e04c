//! Fits the feature pipeline: KPIs, categorical encoding, sparsity and VIF
//! pruning, then shadow-feature selection.

use ratemill::features::{FeatureConfig, Featurizer};
use ratemill::pipeline::{attach_labels, ingest_labeled, PipelineConfig};
use ratemill::synth::{generate, GeneratorConfig};

fn main() -> ratemill::Result<()> {
    let data = generate(&GeneratorConfig { n_companies: 8000, seed: 4, ..Default::default() })?;
    let labels: Vec<_> = data.truth.iter().map(|t| (t.company_id.clone(), t.reference_date, t.target)).collect();
    let (records, _) = attach_labels(data.bureau, &labels);
    let split = ingest_labeled(records, 0, &data.prior, &PipelineConfig::default(), 4)?.split;

    let f = Featurizer::fit(&split.train, &FeatureConfig::default(), 4)?;
    println!("dropped as sparse: {:?}", f.dropped_sparse);
    for d in &f.vif.dropped {
        println!("dropped for VIF:   {} ({:.1})", d.column, d.vif);
    }
    if let Some(s) = &f.shadow {
        for (group, votes) in &s.votes {
            println!("shadow votes       {group:<32} {votes}");
        }
    }
    println!("kept {} columns: {:?}", f.columns.len(), f.columns);
    let m = f.transform(&split.test_oos)?;
    println!("holdout matrix {} x {}", m.n_rows, m.n_cols());
    Ok(())
}
