//! Generates a synthetic bureau cohort and prints its shape.

use ratemill::synth::{generate, theoretical_auc, GeneratorConfig};

fn main() -> ratemill::Result<()> {
    let cfg = GeneratorConfig {
        n_companies: 5000,
        seed: 7,
        emit_cr: true,
        ..Default::default()
    };
    let data = generate(&cfg)?;
    let defaults = data.truth.iter().filter(|t| t.target == 1).count();
    println!("snapshots        {}", data.bureau.len());
    println!("default rate     {:.4}", defaults as f64 / data.truth.len() as f64);
    println!("latent AUC       {:.4}", theoretical_auc(cfg.latent_signal));
    println!("register lines   {}", data.cr_lines.len());
    println!("phenomena        {}", data.phenomena.len());
    println!("status rows      {}", data.statuses.len());
    Ok(())
}
