//! Maps credit-register line histories onto the bureau feature schema and
//! compares a few mapped features with the bureau view.

use ratemill::crbridge::{build_histories, map_to_features, MappingConfig};
use ratemill::synth::{generate, GeneratorConfig};
use ratemill::Error;

fn main() -> ratemill::Result<()> {
    let data = generate(&GeneratorConfig { n_companies: 1000, seed: 8, emit_cr: true, ..Default::default() })?;
    let histories = build_histories(data.cr_lines, &data.phenomena)?;
    let cfg = MappingConfig::default();
    let mut mapped = Vec::new();
    let mut short = 0;
    for h in &histories {
        match map_to_features(h, &data.lookups, &cfg) {
            Ok(s) => mapped.push(s),
            Err(Error::InsufficientHistory(_)) => short += 1,
            Err(e) => return Err(e),
        }
    }
    println!("mapped {} companies, {short} with too little history", mapped.len());
    let bureau: std::collections::HashMap<_, _> = data.bureau.iter().map(|s| (s.company_id.as_str(), s)).collect();
    println!("{:<10} {:>12} {:>12} {:>6} {:>6} {:>6} {:>6}", "company", "rt bureau", "rt register", "dpd b", "dpd r", "c3 b", "c3 r");
    for s in mapped.iter().take(10) {
        let b = bureau[s.company_id.as_str()];
        println!(
            "{:<10} {:>12.0} {:>12.0} {:>6} {:>6} {:>6} {:>6}",
            s.company_id,
            b.rt_balance(),
            s.rt_balance(),
            b.max_past_due_days_6m,
            s.max_past_due_days_6m,
            b.contracts_3m,
            s.contracts_3m
        );
    }
    Ok(())
}
