//! Fits a beta calibration map to miscalibrated scores and compares
//! reliability before and after.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ratemill::calibration::{brier, fit_beta, reliability, CalibrationMap};

fn main() -> ratemill::Result<()> {
    let truth = CalibrationMap::new(1.8, 0.7, -0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let scores: Vec<f64> = (0..20_000).map(|_| rng.random_range(0.01..0.99)).collect();
    let targets: Vec<u8> = scores.iter().map(|&s| u8::from(rng.random_bool(truth.apply(s)))).collect();

    let map = fit_beta(&scores, &targets)?;
    println!("fitted a={:.3} b={:.3} c={:.3}", map.a, map.b, map.c);
    let calibrated = map.apply_all(&scores);
    println!("brier {:.5} -> {:.5}", brier(&scores, &targets)?, brier(&calibrated, &targets)?);
    let before = reliability(&scores, &targets, 10)?;
    let after = reliability(&calibrated, &targets, 10)?;
    let show = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
    println!("{:>12} {:>16} {:>16}", "bin", "before fc/obs", "after fc/obs");
    for (b, a) in before.bins.iter().zip(&after.bins) {
        println!(
            "{:>5.1}-{:<6.1} {:>7}/{:<8} {:>7}/{:<8}",
            b.lower,
            b.upper,
            show(b.mean_forecast),
            show(b.observed_rate),
            show(a.mean_forecast),
            show(a.observed_rate)
        );
    }
    Ok(())
}
