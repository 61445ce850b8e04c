//! Property tests for the invariants of the data, feature, calibration,
//! rating and mapping stages.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ratemill::calibration::{brier, fit_beta};
use ratemill::crbridge::{
    map_to_features, CrCategory, CrCreditLine, CrMonthlyHistory, Lookups, MappingConfig, OriginalDuration,
    RemainingDuration, STATUS_180, STATUS_90,
};
use ratemill::data::{
    derive_target, filter_population, split, CompanySnapshot, LabeledRecord, LegalType, PriorStatus,
    SpecialStatus, TargetRule, YearMonth,
};
use ratemill::features::{shadow_select, vif_prune, FeatureMatrix, ShadowConfig, SHADOW_PREFIX};
use ratemill::rating::{de_bin_traced, BinningConfig};

fn ym(y: i32, m: u8) -> YearMonth {
    YearMonth::new(y, m).unwrap()
}

/// A horizon month: 0 clean, 1 past due 90+ days, 2 three unpaid
/// installments, 3 NPL contract, 4 insolvency.
fn horizon_snapshot(reference: YearMonth, offset: i32, kind: u8) -> CompanySnapshot {
    let mut s = CompanySnapshot::empty("c", reference.add_months(offset));
    s.nrt_contracts = 1;
    match kind {
        1 => s.max_past_due_days_6m = 120,
        2 => s.worst_payment_delay_6m = 3,
        3 => s.def_no = 1,
        4 => s.special_status = SpecialStatus::Insolvency,
        _ => {}
    }
    s
}

prop_compose! {
    fn arb_record()(
        id in 0u32..40,
        year in 2018i32..2022,
        private in prop::bool::weighted(0.1),
        active in prop::bool::weighted(0.85),
        target in prop::bool::weighted(0.2),
    ) -> LabeledRecord {
        let mut s = CompanySnapshot::empty(format!("c{id}"), ym(year, 12));
        s.is_private_individual = private;
        if active {
            s.nrt_contracts = 1;
        }
        LabeledRecord::new(s, u8::from(target))
    }
}

fn arb_prior() -> impl Strategy<Value = PriorStatus> {
    prop::collection::vec((0u32..40, 2017i32..2021, 0u8..4), 0..60).prop_map(|rows| {
        let mut p = PriorStatus::new();
        for (id, y, k) in rows {
            let st = match k {
                0 => SpecialStatus::Insolvency,
                1 => SpecialStatus::Dispute,
                2 => SpecialStatus::Npl,
                _ => SpecialStatus::None,
            };
            p.insert(format!("c{id}"), ym(y, 12), st);
        }
        p
    })
}

fn record_key(r: &LabeledRecord) -> String {
    format!("{}|{}|{}", r.snapshot.company_id, r.snapshot.reference_date, r.target)
}

/// VIF of every column from an ordinary least-squares fit on the others.
fn vif_oracle(m: &FeatureMatrix) -> Vec<f64> {
    let n = m.n_rows;
    let p = m.n_cols();
    (0..p)
        .map(|j| {
            let y = DVector::from_fn(n, |i, _| m.get(i, j));
            let x = DMatrix::from_fn(n, p, |i, c| if c == j { 1.0 } else { m.get(i, c) });
            let beta = x.clone().svd(true, true).solve(&y, 1e-12).unwrap();
            let resid = &y - &x * beta;
            let mean = y.mean();
            let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
            let r2 = 1.0 - resid.norm_squared() / sst;
            1.0 / (1.0 - r2)
        })
        .collect()
}

fn collinear_matrix(seed: u64, n: usize, p: usize) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: usize = (p / 2).max(1);
    let mix: Vec<Vec<f64>> = (0..p)
        .map(|_| (0..base).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let noise: Vec<f64> = (0..p).map(|_| rng.random_range(0.02..1.0)).collect();
    let mut values = Vec::with_capacity(n * p);
    let mut target = Vec::with_capacity(n);
    for _ in 0..n {
        let z: Vec<f64> = (0..base).map(|_| rng.random_range(-1.0..1.0)).collect();
        for j in 0..p {
            let v: f64 = mix[j].iter().zip(&z).map(|(a, b)| a * b).sum::<f64>()
                + noise[j] * rng.random_range(-1.0..1.0);
            values.push(v);
        }
        target.push(u8::from(rng.random_bool(0.3)));
    }
    let names = (0..p).map(|j| format!("x{j}")).collect();
    FeatureMatrix::ungrouped(names, values, target).unwrap()
}

fn line(company: &str, m: YearMonth, rng: &mut ChaCha8Rng) -> CrCreditLine {
    let category = match rng.random_range(0..6) {
        0..=2 => CrCategory::MaturityRisk,
        3 | 4 => CrCategory::RevocableRisk,
        _ => CrCategory::SelfLiquidating,
    };
    let granted = rng.random_range(0.0..50_000.0);
    let used = granted * rng.random_range(0.0..1.0);
    let status_code = match rng.random_range(0..5) {
        0 => STATUS_180[rng.random_range(0..STATUS_180.len())],
        1 => STATUS_90[rng.random_range(0..STATUS_90.len())],
        _ => 100,
    };
    let past_due_amount = if rng.random_bool(0.2) { used * rng.random_range(0.0..1.0) } else { 0.0 };
    let (original_duration, remaining_duration) = if category == CrCategory::RevocableRisk {
        (OriginalDuration::NotApplicable, RemainingDuration::NotApplicable)
    } else if rng.random_bool(0.3) {
        (OriginalDuration::Gt5y, RemainingDuration::Gt1y)
    } else {
        (OriginalDuration::Y1to5, RemainingDuration::Lt1y)
    };
    CrCreditLine {
        company_id: company.into(),
        reference_month: m,
        category,
        status_code,
        granted,
        used,
        past_due_amount,
        original_duration,
        remaining_duration,
    }
}

fn random_history(seed: u64, t: YearMonth, first_offset: i32) -> CrMonthlyHistory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut months = Vec::new();
    let mut phenomena = std::collections::BTreeMap::new();
    for o in (0..=first_offset).rev() {
        let m = t.add_months(-o);
        let k = rng.random_range(0..4);
        months.push((m, (0..k).map(|_| line("c", m, &mut rng)).collect()));
        if rng.random_bool(0.1) {
            let code = ["000551000", "DISPUTE", "INSOLVENCY"][rng.random_range(0..3)];
            phenomena
                .entry(m)
                .or_insert_with(std::collections::BTreeSet::new)
                .insert(code.to_string());
        }
    }
    CrMonthlyHistory {
        company_id: "c".into(),
        months,
        phenomena,
    }
}

fn lookups() -> Lookups {
    Lookups {
        legal_type: HashMap::from([("c".to_string(), LegalType::SC)]),
        protest: HashMap::from([("c".to_string(), false)]),
        sector: HashMap::new(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adding_a_trigger_month_never_clears_the_target(
        kinds in prop::collection::vec(0u8..5, 12),
        at in 0usize..12,
        trigger in 1u8..5,
    ) {
        let reference = ym(2020, 12);
        let rule = TargetRule::default();
        let history: Vec<_> = kinds.iter().enumerate()
            .map(|(i, &k)| horizon_snapshot(reference, i as i32 + 1, k))
            .collect();
        let before = derive_target(reference, &history, &rule).unwrap();
        let mut more = history.clone();
        more[at] = horizon_snapshot(reference, at as i32 + 1, trigger);
        let after = derive_target(reference, &more, &rule).unwrap();
        prop_assert!(after >= before);
        prop_assert_eq!(after, 1);
        prop_assert_eq!(before, u8::from(kinds.iter().any(|&k| k > 0)));
    }

    #[test]
    fn filter_population_is_idempotent(
        records in prop::collection::vec(arb_record(), 0..80),
        prior in arb_prior(),
    ) {
        let (once, _) = filter_population(records, &prior);
        let (twice, report) = filter_population(once.clone(), &prior);
        prop_assert_eq!(&once, &twice);
        prop_assert_eq!(report.retained, report.input);
        prop_assert!(once.iter().all(|r| !r.snapshot.is_private_individual));
    }

    #[test]
    fn split_preserves_the_record_multiset(
        records in prop::collection::vec(arb_record(), 2..120),
        seed in any::<u64>(),
    ) {
        prop_assume!(records.iter().any(|r| r.vintage() != records[0].vintage()));
        let mut expected: Vec<String> = records.iter().map(record_key).collect();
        let latest = records.iter().map(|r| r.vintage()).max().unwrap();
        let s = split(records, seed).unwrap();
        let mut got: Vec<String> = s.train.iter().chain(&s.test_oos).chain(&s.test_oot).map(record_key).collect();
        expected.sort();
        got.sort();
        prop_assert_eq!(expected, got);
        prop_assert!(s.test_oot.iter().all(|r| r.vintage() == latest));
        prop_assert!(s.train.iter().chain(&s.test_oos).all(|r| r.vintage() < latest));
    }

    #[test]
    fn vif_prune_leaves_every_column_under_the_bound(
        seed in any::<u64>(),
        p in 3usize..8,
        max_vif in 2.0f64..10.0,
    ) {
        let m = collinear_matrix(seed, 300, p);
        let (kept, report) = vif_prune(&m, max_vif, &[]).unwrap();
        prop_assert_eq!(kept.n_cols() + report.dropped.len(), p);
        if kept.n_cols() >= 2 {
            for (j, v) in vif_oracle(&kept).into_iter().enumerate() {
                prop_assert!(v <= max_vif * (1.0 + 1e-6), "{} has VIF {v} > {max_vif}", kept.column_names[j]);
            }
        }
    }

    #[test]
    fn beta_calibration_does_not_worsen_brier_on_its_fit_sample(
        seed in any::<u64>(),
        a in 0.3f64..3.0,
        b in 0.3f64..3.0,
        c in -2.0f64..2.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = ratemill::calibration::CalibrationMap::new(a, b, c);
        let scores: Vec<f64> = (0..1500).map(|_| rng.random_range(0.005..0.995)).collect();
        let targets: Vec<u8> = scores.iter().map(|&s| u8::from(rng.random_bool(truth.apply(s)))).collect();
        prop_assume!(targets.contains(&1) && targets.contains(&0));
        let map = fit_beta(&scores, &targets).unwrap();
        let before = brier(&scores, &targets).unwrap();
        let after = brier(&map.apply_all(&scores), &targets).unwrap();
        prop_assert!(after <= before + 1e-6, "brier {before} -> {after}");
    }

    #[test]
    fn cr_mapping_depends_only_on_the_lookback_window(
        seed in any::<u64>(),
        extra in 1i32..10,
    ) {
        let t = ym(2021, 12);
        let h = random_history(seed, t, 12);
        let cfg = MappingConfig::default();
        let lk = lookups();
        let a = map_to_features(&h, &lk, &cfg).unwrap();
        prop_assert_eq!(&a, &map_to_features(&h, &lk, &cfg).unwrap());

        let older = random_history(seed ^ 0x9e37_79b9, t, 12 + extra);
        let mut longer = h.clone();
        let prefix: Vec<_> = older.months.iter().filter(|(m, _)| *m < t.add_months(-12)).cloned().collect();
        longer.months = prefix.into_iter().chain(h.months.iter().cloned()).collect();
        for (m, codes) in older.phenomena.iter().filter(|(m, _)| **m < t.add_months(-12)) {
            longer.phenomena.insert(*m, codes.clone());
        }
        prop_assert_eq!(a, map_to_features(&longer, &lk, &cfg).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn de_best_objective_never_increases(
        seed in any::<u64>(),
        pds in prop::collection::vec(0.0005f64..0.6, 60..300),
        k in 2usize..6,
    ) {
        let targets: Vec<u8> = pds.iter().map(|&p| u8::from(p > 0.3)).collect();
        let cfg = BinningConfig { k, min_share: 0.01, labels: None, ..BinningConfig::default() };
        let (scale, trace) = de_bin_traced(&pds, &targets, &cfg, seed).unwrap();
        prop_assert!(!trace.best_history.is_empty());
        for w in trace.best_history.windows(2) {
            prop_assert!(w[1] <= w[0], "best objective rose from {} to {}", w[0], w[1]);
        }
        prop_assert!(scale.boundaries.windows(2).all(|w| w[0] < w[1]));
    }
}

#[test]
fn shadow_selection_never_keeps_a_shadow_column() {
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 1500;
        let p = 5;
        let mut values = Vec::with_capacity(n * p);
        let mut target = Vec::with_capacity(n);
        for _ in 0..n {
            let row: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
            let logit = 2.5 * row[0] - 1.5 * row[1] - 1.0;
            target.push(u8::from(rng.random_bool(1.0 / (1.0 + (-logit).exp()))));
            values.extend(row);
        }
        let names = (0..p).map(|j| format!("f{j}")).collect();
        let m = FeatureMatrix::ungrouped(names, values, target).unwrap();
        let cfg = ShadowConfig {
            rounds: 3,
            ..ShadowConfig::default()
        };
        let report = shadow_select(&m, &cfg, seed).unwrap();
        assert!(report.selected_columns.iter().all(|c| !c.starts_with(SHADOW_PREFIX)));
        assert!(report.selected_groups.iter().all(|c| !c.starts_with(SHADOW_PREFIX)));
        assert!(report.selected_columns.contains(&"f0".to_string()));
    }
}
