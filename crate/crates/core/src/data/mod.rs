//! Snapshot records, default-target construction, population filtering and
//! the out-of-sample / out-of-time split.

mod csvio;
mod month;

pub use csvio::{
    read_labeled, read_labeled_csv, read_prior_csv, read_snapshot_csv, read_snapshots,
    write_labeled, write_labeled_csv, write_prior_csv, write_snapshot_csv, write_snapshots,
    IngestReport, SNAPSHOT_COLUMNS,
};
pub use month::YearMonth;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::substream;

/// Company legal form: sole proprietorship, limited company, partnership.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LegalType {
    DI,
    SC,
    SP,
}

impl LegalType {
    pub const ALL: [LegalType; 3] = [LegalType::DI, LegalType::SC, LegalType::SP];

    pub fn as_str(self) -> &'static str {
        match self {
            LegalType::DI => "DI",
            LegalType::SC => "SC",
            LegalType::SP => "SP",
        }
    }
}

impl fmt::Display for LegalType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LegalType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "DI" => Ok(LegalType::DI),
            "SC" => Ok(LegalType::SC),
            "SP" => Ok(LegalType::SP),
            other => Err(invalid(format!("unknown legal type {other:?}"))),
        }
    }
}

/// Worst special status over all contracts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpecialStatus {
    None,
    Dispute,
    Insolvency,
    Npl,
}

impl SpecialStatus {
    pub const ALL: [SpecialStatus; 4] = [
        SpecialStatus::None,
        SpecialStatus::Dispute,
        SpecialStatus::Insolvency,
        SpecialStatus::Npl,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SpecialStatus::None => "none",
            SpecialStatus::Dispute => "dispute",
            SpecialStatus::Insolvency => "insolvency",
            SpecialStatus::Npl => "npl",
        }
    }
}

impl fmt::Display for SpecialStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SpecialStatus {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "" | "none" => Ok(SpecialStatus::None),
            "dispute" => Ok(SpecialStatus::Dispute),
            "insolvency" => Ok(SpecialStatus::Insolvency),
            "npl" => Ok(SpecialStatus::Npl),
            other => Err(invalid(format!("unknown special status {other:?}"))),
        }
    }
}

/// One company's monthly behavioral aggregate as seen by the bureau.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompanySnapshot {
    pub company_id: String,
    pub reference_date: YearMonth,
    pub legal_type: LegalType,
    pub special_status: SpecialStatus,
    pub sector_vector: [f64; 5],
    pub rt_mortgages_balance: f64,
    pub rt_non_mortgages_balance: f64,
    pub nrt_balance: f64,
    pub nrt_used: f64,
    pub nrt_past_due_balance: f64,
    /// Unpaid installments, worst over the last 6 months.
    pub worst_payment_delay_6m: u32,
    pub max_past_due_days_6m: u32,
    /// Contracts that entered NPL in the last 12 months.
    pub def_no: u32,
    pub past_due_0_contracts: u32,
    pub past_due_0_contracts_12m: u32,
    pub nrt_contracts: u32,
    /// NRT contracts closed in the last 12 months.
    pub nrt_contracts_12m: u32,
    pub contracts_3m: u32,
    pub contracts_4_12m: u32,
    pub protest_present: bool,
    pub is_private_individual: bool,
}

impl CompanySnapshot {
    /// An in-bonis snapshot with every balance and count at zero.
    pub fn empty(company_id: impl Into<String>, reference_date: YearMonth) -> Self {
        CompanySnapshot {
            company_id: company_id.into(),
            reference_date,
            legal_type: LegalType::SC,
            special_status: SpecialStatus::None,
            sector_vector: [0.0; 5],
            rt_mortgages_balance: 0.0,
            rt_non_mortgages_balance: 0.0,
            nrt_balance: 0.0,
            nrt_used: 0.0,
            nrt_past_due_balance: 0.0,
            worst_payment_delay_6m: 0,
            max_past_due_days_6m: 0,
            def_no: 0,
            past_due_0_contracts: 0,
            past_due_0_contracts_12m: 0,
            nrt_contracts: 0,
            nrt_contracts_12m: 0,
            contracts_3m: 0,
            contracts_4_12m: 0,
            protest_present: false,
            is_private_individual: false,
        }
    }

    pub fn rt_balance(&self) -> f64 {
        self.rt_mortgages_balance + self.rt_non_mortgages_balance
    }

    pub fn validate(&self) -> Result<()> {
        let balances = [
            ("rt_mortgages_balance", self.rt_mortgages_balance),
            ("rt_non_mortgages_balance", self.rt_non_mortgages_balance),
            ("nrt_balance", self.nrt_balance),
            ("nrt_used", self.nrt_used),
            ("nrt_past_due_balance", self.nrt_past_due_balance),
        ];
        for (name, v) in balances {
            if !v.is_finite() || v < 0.0 {
                return Err(invalid(format!(
                    "{} {}: {name} must be finite and non-negative, got {v}",
                    self.company_id, self.reference_date
                )));
            }
        }
        if self.nrt_balance > 0.0 && self.nrt_used > self.nrt_balance {
            return Err(invalid(format!(
                "{} {}: nrt_used {} exceeds nrt_balance {}",
                self.company_id, self.reference_date, self.nrt_used, self.nrt_balance
            )));
        }
        if self.sector_vector.iter().any(|v| !v.is_finite()) {
            return Err(invalid(format!(
                "{} {}: sector vector has non-finite component",
                self.company_id, self.reference_date
            )));
        }
        Ok(())
    }
}

/// Thresholds that turn horizon statuses into the binary default target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetRule {
    pub past_due_days: u32,
    /// Unpaid monthly installments equivalent to `past_due_days`.
    pub unpaid_installments: u32,
}

impl Default for TargetRule {
    fn default() -> Self {
        TargetRule {
            past_due_days: 90,
            unpaid_installments: 3,
        }
    }
}

impl TargetRule {
    pub fn is_trigger(&self, s: &CompanySnapshot) -> bool {
        matches!(
            s.special_status,
            SpecialStatus::Insolvency | SpecialStatus::Npl
        ) || s.def_no >= 1
            || s.max_past_due_days_6m >= self.past_due_days
            || s.worst_payment_delay_6m >= self.unpaid_installments
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledRecord {
    pub snapshot: CompanySnapshot,
    pub target: u8,
    pub horizon_end: YearMonth,
}

impl LabeledRecord {
    pub fn new(snapshot: CompanySnapshot, target: u8) -> Self {
        let horizon_end = snapshot.reference_date.add_months(12);
        LabeledRecord {
            snapshot,
            target,
            horizon_end,
        }
    }

    pub fn vintage(&self) -> i32 {
        self.snapshot.reference_date.year
    }
}

/// Derives the 12-month default flag from the snapshots following `reference`.
///
/// Every month in `(reference, reference + 12]` must be present in `history`;
/// snapshots outside the window are ignored.
pub fn derive_target(
    reference: YearMonth,
    history: &[CompanySnapshot],
    rule: &TargetRule,
) -> Result<u8> {
    let horizon_end = reference.add_months(12);
    let mut covered = [false; 12];
    let mut target = 0u8;
    for s in history {
        let d = s.reference_date;
        if d > reference && d <= horizon_end {
            covered[(reference.months_until(d) - 1) as usize] = true;
            if rule.is_trigger(s) {
                target = 1;
            }
        }
    }
    if let Some(gap) = covered.iter().position(|c| !c) {
        return Err(Error::HorizonNotCovered(format!(
            "missing month {} of horizon after {reference}",
            reference.add_months(gap as i32 + 1)
        )));
    }
    Ok(target)
}

/// Builds labeled records from a monthly panel.
///
/// A row becomes a reference record when it falls in `reference_month`
/// (any month when `None`) and its company has all twelve following months.
/// Returns the records and the number of candidate rows skipped for an
/// incomplete horizon.
pub fn label_panel(
    rows: &[CompanySnapshot],
    reference_month: Option<u8>,
    rule: &TargetRule,
) -> Result<(Vec<LabeledRecord>, usize)> {
    let mut by_company: BTreeMap<&str, Vec<&CompanySnapshot>> = BTreeMap::new();
    for r in rows {
        by_company.entry(r.company_id.as_str()).or_default().push(r);
    }
    let mut out = Vec::new();
    let mut skipped = 0;
    for series in by_company.values_mut() {
        series.sort_by_key(|s| s.reference_date);
        for (i, s) in series.iter().enumerate() {
            if reference_month.is_some_and(|m| m != s.reference_date.month) {
                continue;
            }
            let horizon: Vec<CompanySnapshot> = series[i + 1..]
                .iter()
                .take_while(|h| h.reference_date <= s.reference_date.add_months(12))
                .map(|h| (*h).clone())
                .collect();
            match derive_target(s.reference_date, &horizon, rule) {
                Ok(t) => out.push(LabeledRecord::new((*s).clone(), t)),
                Err(Error::HorizonNotCovered(_)) => skipped += 1,
                Err(e) => return Err(e),
            }
        }
    }
    Ok((out, skipped))
}

/// Special status of each company at a given reference month.
#[derive(Debug, Clone, Default)]
pub struct PriorStatus {
    entries: HashMap<(String, YearMonth), SpecialStatus>,
}

impl PriorStatus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, company_id: impl Into<String>, at: YearMonth, status: SpecialStatus) {
        self.entries.insert((company_id.into(), at), status);
    }

    pub fn get(&self, company_id: &str, at: YearMonth) -> Option<SpecialStatus> {
        self.entries.get(&(company_id.to_string(), at)).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, YearMonth, SpecialStatus)> {
        self.entries.iter().map(|((c, m), s)| (c.as_str(), *m, *s))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub input: usize,
    pub retained: usize,
    pub removed_private: usize,
    pub removed_inactive: usize,
    pub removed_prior_insolvent: usize,
    /// Records without a prior-year entry; they are kept.
    pub missing_prior: usize,
}

pub fn has_active_contracts(s: &CompanySnapshot) -> bool {
    s.rt_balance() > 0.0 || s.nrt_contracts > 0 || s.past_due_0_contracts > 0
}

/// Removes private individuals, companies without active contracts and
/// companies that were insolvent twelve months before their reference date.
pub fn filter_population(
    records: Vec<LabeledRecord>,
    prior: &PriorStatus,
) -> (Vec<LabeledRecord>, FilterReport) {
    let mut report = FilterReport {
        input: records.len(),
        ..Default::default()
    };
    let retained: Vec<LabeledRecord> = records
        .into_iter()
        .filter(|r| {
            let s = &r.snapshot;
            if s.is_private_individual {
                report.removed_private += 1;
                return false;
            }
            if !has_active_contracts(s) {
                report.removed_inactive += 1;
                return false;
            }
            match prior.get(&s.company_id, s.reference_date.add_months(-12)) {
                Some(SpecialStatus::Insolvency) => {
                    report.removed_prior_insolvent += 1;
                    false
                }
                Some(_) => true,
                None => {
                    report.missing_prior += 1;
                    true
                }
            }
        })
        .collect();
    if report.missing_prior > 0 {
        log::warn!(
            "{} records have no prior-year status entry; treated as not insolvent",
            report.missing_prior
        );
    }
    report.retained = retained.len();
    (retained, report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitDataset {
    pub train: Vec<LabeledRecord>,
    pub test_oos: Vec<LabeledRecord>,
    pub test_oot: Vec<LabeledRecord>,
    pub split_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub records: usize,
    pub defaults: usize,
    pub target_rate: f64,
    pub vintages: Vec<i32>,
}

impl SplitSummary {
    pub fn of(records: &[LabeledRecord]) -> Self {
        let defaults = records.iter().filter(|r| r.target == 1).count();
        let mut vintages: Vec<i32> = records.iter().map(|r| r.vintage()).collect();
        vintages.sort_unstable();
        vintages.dedup();
        SplitSummary {
            records: records.len(),
            defaults,
            target_rate: if records.is_empty() {
                0.0
            } else {
                defaults as f64 / records.len() as f64
            },
            vintages,
        }
    }
}

/// Record counts and target rates per split, written next to the split files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub oos_fraction: f64,
    pub train: SplitSummary,
    pub test_oos: SplitSummary,
    pub test_oot: SplitSummary,
}

impl SplitDataset {
    pub fn manifest(&self, oos_fraction: f64) -> SplitManifest {
        SplitManifest {
            seed: self.split_seed,
            oos_fraction,
            train: SplitSummary::of(&self.train),
            test_oos: SplitSummary::of(&self.test_oos),
            test_oot: SplitSummary::of(&self.test_oot),
        }
    }
}

pub const OOS_FRACTION: f64 = 0.20;

/// Latest vintage goes out-of-time; the rest is split 80/20 stratified on
/// the target. Records keep their input order within each split.
pub fn split(records: Vec<LabeledRecord>, seed: u64) -> Result<SplitDataset> {
    split_with_fraction(records, seed, OOS_FRACTION)
}

pub fn split_with_fraction(
    records: Vec<LabeledRecord>,
    seed: u64,
    oos_fraction: f64,
) -> Result<SplitDataset> {
    if !(0.0..1.0).contains(&oos_fraction) {
        return Err(invalid(format!("oos fraction {oos_fraction} outside [0,1)")));
    }
    let latest = records
        .iter()
        .map(|r| r.vintage())
        .max()
        .ok_or_else(|| Error::OutOfTimeSplitImpossible("no records".into()))?;
    if records.iter().all(|r| r.vintage() == latest) {
        return Err(Error::OutOfTimeSplitImpossible(format!(
            "all records belong to vintage {latest}"
        )));
    }

    let mut test_oot = Vec::new();
    let mut in_time = Vec::new();
    for r in records {
        if r.vintage() == latest {
            test_oot.push(r);
        } else {
            in_time.push(r);
        }
    }

    let mut is_test = vec![false; in_time.len()];
    for stratum in [0u8, 1u8] {
        let mut idx: Vec<usize> = (0..in_time.len())
            .filter(|&i| in_time[i].target == stratum)
            .collect();
        let n_test = (idx.len() as f64 * oos_fraction).round() as usize;
        let mut rng = substream(seed, u64::from(stratum));
        idx.shuffle(&mut rng);
        for &i in &idx[..n_test] {
            is_test[i] = true;
        }
    }

    let mut train = Vec::new();
    let mut test_oos = Vec::new();
    for (r, t) in in_time.into_iter().zip(is_test) {
        if t {
            test_oos.push(r);
        } else {
            train.push(r);
        }
    }
    Ok(SplitDataset {
        train,
        test_oos,
        test_oot,
        split_seed: seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ym(y: i32, m: u8) -> YearMonth {
        YearMonth::new(y, m).unwrap()
    }

    fn active(id: &str, at: YearMonth) -> CompanySnapshot {
        let mut s = CompanySnapshot::empty(id, at);
        s.nrt_contracts = 1;
        s.nrt_balance = 1000.0;
        s.past_due_0_contracts = 1;
        s
    }

    fn horizon(reference: YearMonth) -> Vec<CompanySnapshot> {
        (1..=12)
            .map(|m| active("c", reference.add_months(m)))
            .collect()
    }

    #[test]
    fn clean_horizon_is_in_bonis() {
        let r = ym(2020, 3);
        assert_eq!(derive_target(r, &horizon(r), &TargetRule::default()).unwrap(), 0);
    }

    #[test]
    fn insolvency_month_defaults() {
        let r = ym(2020, 3);
        let mut h = horizon(r);
        h[5].special_status = SpecialStatus::Insolvency;
        assert_eq!(derive_target(r, &h, &TargetRule::default()).unwrap(), 1);
    }

    #[test]
    fn past_due_120_days_defaults() {
        let r = ym(2020, 3);
        let mut h = horizon(r);
        h[11].max_past_due_days_6m = 120;
        assert_eq!(derive_target(r, &h, &TargetRule::default()).unwrap(), 1);
    }

    #[test]
    fn three_unpaid_installments_default_two_do_not() {
        let r = ym(2020, 3);
        let mut h = horizon(r);
        h[0].worst_payment_delay_6m = 2;
        assert_eq!(derive_target(r, &h, &TargetRule::default()).unwrap(), 0);
        h[0].worst_payment_delay_6m = 3;
        assert_eq!(derive_target(r, &h, &TargetRule::default()).unwrap(), 1);
    }

    #[test]
    fn dispute_alone_is_not_default() {
        let r = ym(2020, 3);
        let mut h = horizon(r);
        h[3].special_status = SpecialStatus::Dispute;
        assert_eq!(derive_target(r, &h, &TargetRule::default()).unwrap(), 0);
    }

    #[test]
    fn missing_month_is_error() {
        let r = ym(2020, 3);
        let mut h = horizon(r);
        h.remove(4);
        let err = derive_target(r, &h, &TargetRule::default()).unwrap_err();
        assert!(err.to_string().contains("horizon not covered"));
    }

    #[test]
    fn triggers_outside_window_are_ignored() {
        let r = ym(2020, 3);
        let mut h = horizon(r);
        let mut late = active("c", r.add_months(13));
        late.def_no = 4;
        h.push(late);
        let mut early = active("c", r);
        early.def_no = 4;
        h.push(early);
        assert_eq!(derive_target(r, &h, &TargetRule::default()).unwrap(), 0);
    }

    #[test]
    fn filter_rules() {
        let at = ym(2021, 3);
        let mut private = active("p", at);
        private.is_private_individual = true;
        let inactive = CompanySnapshot::empty("i", at);
        let insolvent = active("x", at);
        let keep = active("k", at);
        let unknown = active("u", at);
        let mut prior = PriorStatus::new();
        prior.insert("x", ym(2020, 3), SpecialStatus::Insolvency);
        prior.insert("k", ym(2020, 3), SpecialStatus::Dispute);
        prior.insert("p", ym(2020, 3), SpecialStatus::None);
        prior.insert("i", ym(2020, 3), SpecialStatus::None);
        let recs = [private, inactive, insolvent, keep, unknown]
            .into_iter()
            .map(|s| LabeledRecord::new(s, 0))
            .collect();
        let (kept, report) = filter_population(recs, &prior);
        let ids: Vec<&str> = kept.iter().map(|r| r.snapshot.company_id.as_str()).collect();
        assert_eq!(ids, vec!["k", "u"]);
        assert_eq!(report.removed_private, 1);
        assert_eq!(report.removed_inactive, 1);
        assert_eq!(report.removed_prior_insolvent, 1);
        assert_eq!(report.missing_prior, 1);
    }

    fn panel(n: usize, positives: usize, year: i32) -> Vec<LabeledRecord> {
        (0..n)
            .map(|i| {
                LabeledRecord::new(
                    active(&format!("{year}-{i}"), ym(year, 3)),
                    u8::from(i < positives),
                )
            })
            .collect()
    }

    #[test]
    fn stratified_split_arithmetic() {
        let mut recs = panel(1000, 35, 2019);
        recs.extend(panel(50, 2, 2022));
        let s = split(recs, 11).unwrap();
        assert_eq!(s.test_oos.len(), 200);
        assert_eq!(s.test_oos.iter().filter(|r| r.target == 1).count(), 7);
        assert_eq!(s.train.len(), 800);
        assert_eq!(s.test_oot.len(), 50);
        assert!(s.test_oot.iter().all(|r| r.vintage() == 2022));
    }

    #[test]
    fn split_is_deterministic_and_seed_sensitive() {
        let mut recs = panel(500, 40, 2019);
        recs.extend(panel(100, 5, 2020));
        let a = split(recs.clone(), 3).unwrap();
        let b = split(recs.clone(), 3).unwrap();
        let c = split(recs, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.test_oos, c.test_oos);
    }

    #[test]
    fn single_vintage_cannot_split() {
        let err = split(panel(10, 1, 2020), 1).unwrap_err();
        assert!(matches!(err, Error::OutOfTimeSplitImpossible(_)));
    }

    #[test]
    fn label_panel_uses_reference_month() {
        let mut rows = vec![active("a", ym(2019, 3))];
        rows.extend(horizon(ym(2019, 3)).into_iter().map(|mut s| {
            s.company_id = "a".into();
            s
        }));
        rows[7].def_no = 1;
        let (recs, skipped) = label_panel(&rows, Some(3), &TargetRule::default()).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].target, 1);
        assert_eq!(recs[0].horizon_end, ym(2020, 3));
        // the March 2020 row has no horizon of its own
        assert_eq!(skipped, 1);
    }

    #[test]
    fn snapshot_validation() {
        let mut s = active("a", ym(2020, 1));
        assert!(s.validate().is_ok());
        s.nrt_used = 2000.0;
        assert!(s.validate().is_err());
        s.nrt_used = 10.0;
        s.sector_vector[2] = f64::NAN;
        assert!(s.validate().is_err());
    }
}
