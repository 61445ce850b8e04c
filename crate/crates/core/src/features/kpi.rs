use serde::{Deserialize, Serialize};

use crate::data::CompanySnapshot;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KpiConfig {
    /// Lower edges of the past-due-days buckets, increasing.
    pub past_due_bins: Vec<f64>,
    /// Value of a ratio with zero denominator and positive numerator;
    /// also the winsorization cap for every ratio.
    pub ratio_cap: f64,
}

impl Default for KpiConfig {
    fn default() -> Self {
        KpiConfig {
            past_due_bins: vec![0.0, 5.0, 30.0, 60.0, 90.0, 120.0, 180.0],
            ratio_cap: 1e6,
        }
    }
}

/// Derived features of one snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kpis {
    pub rt_balance: f64,
    pub nrt_rt_ratio: f64,
    pub nrt_used_rt_ratio: f64,
    pub draw_ratio_nrt: f64,
    pub npl_present: u8,
    pub closed_past_due_0: u8,
    pub closed_nrt: u8,
    pub past_due_0: u8,
    pub nrt_present: u8,
    /// Lower edge of the bucket holding `max_past_due_days_6m`.
    pub nrt_past_due_bin: f64,
}

impl Kpis {
    pub const NAMES: [&'static str; 10] = [
        "rt_balance",
        "nrt_rt_ratio",
        "nrt_used_rt_ratio",
        "draw_ratio_nrt",
        "npl_present",
        "closed_past_due_0",
        "closed_nrt",
        "past_due_0",
        "nrt_present",
        "nrt_past_due_bin",
    ];

    pub fn values(&self) -> [f64; 10] {
        [
            self.rt_balance,
            self.nrt_rt_ratio,
            self.nrt_used_rt_ratio,
            self.draw_ratio_nrt,
            f64::from(self.npl_present),
            f64::from(self.closed_past_due_0),
            f64::from(self.closed_nrt),
            f64::from(self.past_due_0),
            f64::from(self.nrt_present),
            self.nrt_past_due_bin,
        ]
    }
}

/// `num / den` with 0/0 = 0, x/0 = cap, capped above at `cap`.
pub fn safe_ratio(num: f64, den: f64, cap: f64) -> f64 {
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            cap
        }
    } else {
        (num / den).min(cap)
    }
}

/// Lower edge of the bucket containing `x`; values below the first edge
/// map to the first edge.
pub fn bucket(x: f64, edges: &[f64]) -> f64 {
    match edges.iter().rposition(|&e| e <= x) {
        Some(k) => edges[k],
        None => edges.first().copied().unwrap_or(0.0),
    }
}

pub fn make_kpis(s: &CompanySnapshot, cfg: &KpiConfig) -> Kpis {
    let rt = s.rt_balance();
    let cap = cfg.ratio_cap;
    Kpis {
        rt_balance: rt,
        nrt_rt_ratio: safe_ratio(s.nrt_balance, rt, cap),
        nrt_used_rt_ratio: safe_ratio(s.nrt_used, rt, cap),
        draw_ratio_nrt: safe_ratio(s.nrt_used, s.nrt_balance, cap),
        npl_present: u8::from(s.def_no >= 1),
        closed_past_due_0: u8::from(s.past_due_0_contracts_12m >= 1),
        closed_nrt: u8::from(s.nrt_contracts_12m >= 1),
        past_due_0: u8::from(s.past_due_0_contracts >= 1),
        nrt_present: u8::from(s.nrt_contracts >= 1),
        nrt_past_due_bin: bucket(f64::from(s.max_past_due_days_6m), &cfg.past_due_bins),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::YearMonth;
    use proptest::prelude::*;

    fn snap() -> CompanySnapshot {
        CompanySnapshot::empty("c", YearMonth::new(2020, 3).unwrap())
    }

    #[test]
    fn worked_examples() {
        let mut s = snap();
        s.rt_mortgages_balance = 100.0;
        s.rt_non_mortgages_balance = 50.0;
        s.def_no = 2;
        let k = make_kpis(&s, &KpiConfig::default());
        assert_eq!(k.rt_balance, 150.0);
        assert_eq!(k.draw_ratio_nrt, 0.0);
        assert_eq!(k.npl_present, 1);
        assert_eq!(k.nrt_rt_ratio, 0.0);
    }

    #[test]
    fn zero_denominator_sentinels() {
        assert_eq!(safe_ratio(0.0, 0.0, 1e6), 0.0);
        assert_eq!(safe_ratio(5.0, 0.0, 1e6), 1e6);
        assert_eq!(safe_ratio(5e9, 1.0, 1e6), 1e6);
        assert_eq!(safe_ratio(1.0, 4.0, 1e6), 0.25);
    }

    #[test]
    fn buckets_emit_lower_edges() {
        let e = KpiConfig::default().past_due_bins;
        assert_eq!(bucket(0.0, &e), 0.0);
        assert_eq!(bucket(4.0, &e), 0.0);
        assert_eq!(bucket(5.0, &e), 5.0);
        assert_eq!(bucket(95.0, &e), 90.0);
        assert_eq!(bucket(400.0, &e), 180.0);
    }

    proptest! {
        #[test]
        fn flags_equal_threshold_predicates(
            def_no in 0u32..4, pd12 in 0u32..4, n12 in 0u32..4, pd0 in 0u32..4, nrt in 0u32..4
        ) {
            let mut s = snap();
            s.def_no = def_no;
            s.past_due_0_contracts_12m = pd12;
            s.nrt_contracts_12m = n12;
            s.past_due_0_contracts = pd0;
            s.nrt_contracts = nrt;
            let k = make_kpis(&s, &KpiConfig::default());
            prop_assert_eq!(k.npl_present, u8::from(def_no >= 1));
            prop_assert_eq!(k.closed_past_due_0, u8::from(pd12 >= 1));
            prop_assert_eq!(k.closed_nrt, u8::from(n12 >= 1));
            prop_assert_eq!(k.past_due_0, u8::from(pd0 >= 1));
            prop_assert_eq!(k.nrt_present, u8::from(nrt >= 1));
        }
    }
}
