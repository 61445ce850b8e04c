//! Bins calibrated PDs into a master scale with differential evolution and
//! validates it on a fresh sample with binomial and traffic-light tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ratemill::rating::{de_bin_traced, validate_scale, BinningConfig, ValidationConfig};

fn sample(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<u8>) {
    let pds: Vec<f64> = (0..n).map(|_| (rng.random_range(-7.0..-0.5f64)).exp()).collect();
    let targets = pds.iter().map(|&p| u8::from(rng.random_bool(p))).collect();
    (pds, targets)
}

fn main() -> ratemill::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (pds, targets) = sample(&mut rng, 20_000);
    let cfg = BinningConfig { k: 7, ..Default::default() };
    let (scale, trace) = de_bin_traced(&pds, &targets, &cfg, 2)?;
    println!("generations {} objective {:.6e}", trace.generations, scale.objective);

    let (oot_pds, oot_targets) = sample(&mut rng, 10_000);
    let rows = validate_scale(&scale, &oot_pds, &oot_targets, &ValidationConfig::default())?;
    println!("{:<5} {:>9} {:>9} {:>7} {:>9} {:>10} {:>8}", "class", "lower", "pd", "count", "observed", "binom p", "light");
    for (i, r) in rows.iter().enumerate() {
        let lower = if i == 0 { 0.0 } else { scale.boundaries[i - 1] };
        println!(
            "{:<5} {:>9.5} {:>9.5} {:>7} {:>9.5} {:>10.4} {:>8}",
            r.label,
            lower,
            r.class_pd,
            r.count,
            r.observed_rate.unwrap_or(f64::NAN),
            r.binomial_p.unwrap_or(f64::NAN),
            r.traffic_light.map_or("-".to_string(), |t| format!("{t:?}"))
        );
    }
    Ok(())
}
