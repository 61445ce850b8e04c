//! The whole pipeline in one call: features, training, calibration, rating
//! scale and out-of-time validation. Writes the scoring bundle and scale
//! to the directory given as the first argument (default `ratemill_out`).

use std::path::PathBuf;

use ratemill::pipeline::{attach_labels, ingest_labeled, run_all, PipelineConfig};
use ratemill::synth::{generate, GeneratorConfig};

fn main() -> ratemill::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "ratemill_out".into()));
    let cfg = PipelineConfig::default();
    let data = generate(&GeneratorConfig { n_companies: 20_000, seed: 1, ..Default::default() })?;
    let labels: Vec<_> = data.truth.iter().map(|t| (t.company_id.clone(), t.reference_date, t.target)).collect();
    let (records, _) = attach_labels(data.bureau, &labels);
    let split = ingest_labeled(records, 0, &data.prior, &cfg, 1)?.split;
    let run = run_all(&split, &cfg, 1)?;

    println!("features         {}", run.bundle.featurizer.columns.len());
    println!("threshold        {:.4}", run.bundle.threshold);
    println!("holdout AUC      {:.4}", run.oos.auc);
    println!("out-of-time AUC  {:.4}", run.oot.auc);
    println!("brier            {:.5} -> {:.5}", run.calibration.brier_before, run.calibration.brier_after);
    println!("scale classes    {:?}", run.scale.labels);
    println!("validation pass  {}", run.validation.passed);
    for c in &run.validation.classes {
        println!(
            "  {:<4} pd={:.4} n={:<5} defaults={:<4} binomial p={:.3}",
            c.label,
            c.class_pd,
            c.count,
            c.defaults,
            c.binomial_p.unwrap_or(f64::NAN)
        );
    }

    std::fs::create_dir_all(&out)?;
    run.bundle.write(&out.join("model.json"))?;
    std::fs::write(out.join("scale.json"), serde_json::to_string_pretty(&run.scale)?)?;
    println!("wrote {}", out.display());
    Ok(())
}
