//! Trains the gradient-boosted tree model, with a short random search over
//! time-series folds.

use ratemill::booster::{fit, tune};
use ratemill::features::{FeatureConfig, Featurizer};
use ratemill::metrics::evaluate_scores;
use ratemill::pipeline::{attach_labels, ingest_labeled, select_threshold, PipelineConfig};
use ratemill::synth::{generate, GeneratorConfig};

fn main() -> ratemill::Result<()> {
    let data = generate(&GeneratorConfig { n_companies: 10_000, seed: 5, ..Default::default() })?;
    let labels: Vec<_> = data.truth.iter().map(|t| (t.company_id.clone(), t.reference_date, t.target)).collect();
    let (records, _) = attach_labels(data.bureau, &labels);
    let cfg = PipelineConfig::default();
    let split = ingest_labeled(records, 0, &data.prior, &cfg, 5)?.split;
    let features = FeatureConfig { shadow: None, ..Default::default() };
    let f = Featurizer::fit(&split.train, &features, 5)?;
    let train = f.transform(&split.train)?;
    let test = f.transform(&split.test_oos)?;

    let tuned = tune(&train, 4, 5)?;
    for t in &tuned.trials {
        println!("trial lr={:.3} leaves={:<3} score={:?}", t.params.learning_rate, t.params.max_leaves, t.score);
    }
    let model = fit(&train, &tuned.best, 5)?;
    let threshold = select_threshold(&model.predict_proba(&train)?, &train.target, cfg.beta)?;
    let report = evaluate_scores(&model.predict_proba(&test)?, &test.target, threshold, cfg.beta)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
