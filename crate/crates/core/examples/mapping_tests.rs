//! Runs the paired-test battery that checks whether register-mapped
//! features dominate their bureau counterparts, with BY-adjusted p-values.

use ratemill::crbridge::{build_histories, map_to_features, MappingConfig};
use ratemill::stats::{pair_snapshots, run_battery, Battery};
use ratemill::synth::{generate, GeneratorConfig};

fn main() -> ratemill::Result<()> {
    let data = generate(&GeneratorConfig { n_companies: 400, seed: 9, emit_cr: true, ..Default::default() })?;
    let histories = build_histories(data.cr_lines, &data.phenomena)?;
    let mapped: Vec<_> = histories
        .iter()
        .filter_map(|h| map_to_features(h, &data.lookups, &MappingConfig::default()).ok())
        .collect();
    let battery = Battery::default();
    let features: Vec<String> = battery.tests.iter().map(|t| t.feature.clone()).collect();
    let pairs = pair_snapshots(&data.bureau, &mapped, &features)?;
    for r in run_battery(&pairs, &battery)? {
        println!(
            "{:<26} stat={:>10.2} p={:.3e} adj={:.3e} {:?}",
            r.name,
            r.statistic,
            r.p_raw,
            r.p_adjusted.unwrap_or(f64::NAN),
            r.decision
        );
    }
    Ok(())
}
