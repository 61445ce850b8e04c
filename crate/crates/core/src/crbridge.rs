//! Central Credit Register bridge: monthly credit-line reports mapped into
//! the bureau snapshot schema.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{CompanySnapshot, LegalType, SpecialStatus, YearMonth};
use crate::error::{invalid, Error, Result};

/// Status codes whose whole line balance is at least 180 days past due.
pub const STATUS_180: [u32; 6] = [827, 831, 125, 129, 133, 137];
/// Status codes whose whole line balance is at least 90 days past due.
pub const STATUS_90: [u32; 6] = [826, 830, 124, 128, 132, 136];
pub const NPL_PHENOMENON: &str = "000551000";

/// Snapshot fields that the register can only approximate.
pub const PROXY_FEATURES: [&str; 8] = [
    "special_status",
    "past_due_0_contracts_12m",
    "contracts_3m",
    "contracts_4_12m",
    "past_due_0_contracts",
    "max_past_due_days_6m",
    "worst_payment_delay_6m",
    "def_no",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrCategory {
    MaturityRisk,
    RevocableRisk,
    SelfLiquidating,
    Unsecured,
    Collateral,
    Derivative,
    Info,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OriginalDuration {
    Lt1y,
    Y1to5,
    Gt5y,
    NotApplicable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemainingDuration {
    Lt1y,
    Gt1y,
    NotApplicable,
}

/// One aggregated classification group of a company-month report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrCreditLine {
    pub company_id: String,
    pub reference_month: YearMonth,
    pub category: CrCategory,
    pub status_code: u32,
    pub granted: f64,
    pub used: f64,
    pub past_due_amount: f64,
    pub original_duration: OriginalDuration,
    pub remaining_duration: RemainingDuration,
}

impl CrCreditLine {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("granted", self.granted),
            ("used", self.used),
            ("past_due_amount", self.past_due_amount),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(invalid(format!(
                    "{} {}: {name} must be finite and non-negative, got {v}",
                    self.company_id, self.reference_month
                )));
            }
        }
        if self.category == CrCategory::RevocableRisk
            && (self.original_duration != OriginalDuration::NotApplicable
                || self.remaining_duration != RemainingDuration::NotApplicable)
        {
            return Err(invalid(format!(
                "{} {}: revocable lines carry no durations",
                self.company_id, self.reference_month
            )));
        }
        Ok(())
    }

    fn bucket(&self) -> Bucket {
        if STATUS_180.contains(&self.status_code) {
            Bucket::D180
        } else if STATUS_90.contains(&self.status_code) {
            Bucket::D90
        } else {
            Bucket::Other
        }
    }

    fn is_mapped(&self) -> bool {
        matches!(self.category, CrCategory::MaturityRisk | CrCategory::RevocableRisk)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bucket {
    D180,
    D90,
    Other,
}

/// A company's reports, one entry per month in increasing order. Months
/// absent from the input are empty reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrMonthlyHistory {
    pub company_id: String,
    pub months: Vec<(YearMonth, Vec<CrCreditLine>)>,
    pub phenomena: BTreeMap<YearMonth, BTreeSet<String>>,
}

impl CrMonthlyHistory {
    pub fn reference(&self) -> Option<YearMonth> {
        self.months.last().map(|(m, _)| *m)
    }

    fn lines_at(&self, m: YearMonth) -> &[CrCreditLine] {
        match self.months.binary_search_by_key(&m, |(k, _)| *k) {
            Ok(i) => &self.months[i].1,
            Err(_) => &[],
        }
    }

    /// Phenomenon codes reported in the `n` months ending at `reference`.
    pub fn phenomena_within(&self, reference: YearMonth, n: i32) -> BTreeSet<&str> {
        self.phenomena
            .range(reference.add_months(1 - n)..=reference)
            .flat_map(|(_, s)| s.iter().map(String::as_str))
            .collect()
    }
}

/// Groups lines and phenomena into per-company histories, sorted by id.
pub fn build_histories(
    lines: Vec<CrCreditLine>,
    phenomena: &[(String, YearMonth, String)],
) -> Result<Vec<CrMonthlyHistory>> {
    let mut by: BTreeMap<String, BTreeMap<YearMonth, Vec<CrCreditLine>>> = BTreeMap::new();
    for l in lines {
        l.validate()?;
        by.entry(l.company_id.clone())
            .or_default()
            .entry(l.reference_month)
            .or_default()
            .push(l);
    }
    let mut ph: HashMap<&str, BTreeMap<YearMonth, BTreeSet<String>>> = HashMap::new();
    for (c, m, code) in phenomena {
        ph.entry(c.as_str())
            .or_default()
            .entry(*m)
            .or_default()
            .insert(code.clone());
    }
    Ok(by
        .into_iter()
        .map(|(company_id, months)| CrMonthlyHistory {
            phenomena: ph.remove(company_id.as_str()).unwrap_or_default(),
            company_id,
            months: months.into_iter().collect(),
        })
        .collect())
}

/// Past-due split of one category's lines; the four parts add up to the
/// total used balance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PastDueBalances {
    pub pd0: f64,
    pub pd30: f64,
    pub pd90: f64,
    pub pd180: f64,
}

impl PastDueBalances {
    pub fn total(&self) -> f64 {
        self.pd0 + self.pd30 + self.pd90 + self.pd180
    }

    pub fn past_due(&self) -> f64 {
        self.pd30 + self.pd90 + self.pd180
    }
}

/// Status-bucketed past-due balances of a single company-month, using the
/// used amount as the line balance.
pub fn aggregate_past_due(lines: &[CrCreditLine]) -> Result<PastDueBalances> {
    let mut out = PastDueBalances::default();
    let mut other_balance = 0.0;
    for l in lines {
        match l.bucket() {
            Bucket::D180 => out.pd180 += l.used,
            Bucket::D90 => out.pd90 += l.used,
            Bucket::Other => {
                other_balance += l.used;
                out.pd30 += l.past_due_amount;
            }
        }
    }
    out.pd0 = other_balance - out.pd30;
    if out.pd0 < -1e-9 * other_balance.max(1.0) {
        return Err(Error::InconsistentAmounts(format!(
            "past-due amounts {} exceed balances {other_balance}",
            out.pd30
        )));
    }
    out.pd0 = out.pd0.max(0.0);
    Ok(out)
}

/// Past-due balances of the maturity (RT) and revocable (NRT) lines.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryPastDue {
    pub rt: PastDueBalances,
    pub nrt: PastDueBalances,
}

pub fn aggregate_by_category(lines: &[CrCreditLine]) -> Result<CategoryPastDue> {
    let pick = |c: CrCategory| -> Vec<CrCreditLine> {
        lines.iter().filter(|l| l.category == c).cloned().collect()
    };
    Ok(CategoryPastDue {
        rt: aggregate_past_due(&pick(CrCategory::MaturityRisk))?,
        nrt: aggregate_past_due(&pick(CrCategory::RevocableRisk))?,
    })
}

pub const ABS_THRESHOLD: f64 = 500.0;
pub const REL_THRESHOLD: f64 = 0.01;

/// Materially past due when both the absolute and the relative threshold
/// are reached. A zero total with positive past due counts as relatively
/// material.
pub fn apply_materiality(past_due: f64, total_balance: f64, abs_threshold: f64, rel_threshold: f64) -> bool {
    if past_due < abs_threshold || past_due <= 0.0 {
        return false;
    }
    total_balance <= 0.0 || past_due / total_balance >= rel_threshold
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MappingConfig {
    pub abs_threshold: f64,
    pub rel_threshold: f64,
    pub npl_code: String,
    pub dispute_codes: Vec<String>,
    pub insolvency_codes: Vec<String>,
}

impl Default for MappingConfig {
    fn default() -> Self {
        MappingConfig {
            abs_threshold: ABS_THRESHOLD,
            rel_threshold: REL_THRESHOLD,
            npl_code: NPL_PHENOMENON.into(),
            dispute_codes: vec!["DISPUTE".into()],
            insolvency_codes: vec!["INSOLVENCY".into()],
        }
    }
}

impl MappingConfig {
    fn material(&self, past_due: f64, total: f64) -> bool {
        apply_materiality(past_due, total, self.abs_threshold, self.rel_threshold)
    }

    /// Days-past-due proxy of one category: the upper edge of the worst
    /// material bucket.
    pub fn days_proxy(&self, pd: &PastDueBalances) -> u32 {
        let total = pd.total();
        if self.material(pd.pd180, total) {
            180
        } else if self.material(pd.pd90, total) {
            90
        } else if self.material(pd.pd30, total) {
            30
        } else {
            0
        }
    }

    /// Unpaid-installment proxy of the maturity lines.
    pub fn installments_proxy(&self, pd: &PastDueBalances) -> u32 {
        match self.days_proxy(pd) {
            180 => 6,
            90 => 3,
            30 => 1,
            _ => 0,
        }
    }
}

/// Company attributes that the register does not carry.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lookups {
    pub legal_type: HashMap<String, LegalType>,
    pub protest: HashMap<String, bool>,
    pub sector: HashMap<String, [f64; 5]>,
}

/// Months of history a lookback feature needs before the reference month.
const LOOKBACK: [(&str, i64); 9] = [
    ("contracts_3m", 3),
    ("max_past_due_days_6m", 5),
    ("worst_payment_delay_6m", 5),
    ("nrt_contracts_12m", 12),
    ("past_due_0_contracts_12m", 12),
    ("contracts_4_12m", 12),
    ("def_no", 11),
    ("closed_nrt", 12),
    ("closed_past_due_0", 12),
];

#[derive(Debug, Clone, Copy, Default)]
struct MonthTotals {
    rt_granted: f64,
    nrt_granted: f64,
    rt: PastDueBalances,
    nrt: PastDueBalances,
}

/// Maps a history onto a snapshot at its last month.
pub fn map_to_features(h: &CrMonthlyHistory, lookups: &Lookups, cfg: &MappingConfig) -> Result<CompanySnapshot> {
    let t = h
        .reference()
        .ok_or_else(|| invalid(format!("{}: empty history", h.company_id)))?;
    let span = h.months[0].0.months_until(t);
    let short: Vec<String> = LOOKBACK
        .iter()
        .filter(|(_, need)| span < *need)
        .map(|(f, _)| f.to_string())
        .collect();
    if !short.is_empty() {
        return Err(Error::InsufficientHistory(short));
    }
    let legal_type = *lookups
        .legal_type
        .get(&h.company_id)
        .ok_or_else(|| invalid(format!("{}: no legal type in lookups", h.company_id)))?;
    let protest = *lookups
        .protest
        .get(&h.company_id)
        .ok_or_else(|| invalid(format!("{}: no protest flag in lookups", h.company_id)))?;

    // totals for months t-12 ..= t, oldest first
    let mut totals = Vec::with_capacity(13);
    for o in (0..=12).rev() {
        let m = t.add_months(-o);
        let lines: Vec<CrCreditLine> = h.lines_at(m).iter().filter(|l| l.is_mapped()).cloned().collect();
        let pd = aggregate_by_category(&lines).map_err(|e| match e {
            Error::InconsistentAmounts(msg) => Error::InconsistentAmounts(format!("{} {m}: {msg}", h.company_id)),
            e => e,
        })?;
        let sum = |c: CrCategory| lines.iter().filter(|l| l.category == c).map(|l| l.granted).sum::<f64>();
        totals.push(MonthTotals {
            rt_granted: sum(CrCategory::MaturityRisk),
            nrt_granted: sum(CrCategory::RevocableRisk),
            rt: pd.rt,
            nrt: pd.nrt,
        });
    }
    let now = &totals[12];
    let current = h.lines_at(t);
    let mut s = CompanySnapshot::empty(h.company_id.clone(), t);
    s.legal_type = legal_type;
    s.protest_present = protest;
    if let Some(v) = lookups.sector.get(&h.company_id) {
        s.sector_vector = *v;
    }

    for l in current.iter().filter(|l| l.category == CrCategory::MaturityRisk) {
        if l.original_duration == OriginalDuration::Gt5y {
            s.rt_mortgages_balance += l.granted;
        } else {
            s.rt_non_mortgages_balance += l.granted;
        }
    }
    let nrt: Vec<&CrCreditLine> = current
        .iter()
        .filter(|l| l.category == CrCategory::RevocableRisk)
        .collect();
    s.nrt_balance = nrt.iter().map(|l| l.granted).sum();
    s.nrt_used = nrt.iter().map(|l| l.used).sum();
    s.nrt_contracts = nrt.iter().filter(|l| l.granted > 0.0).count() as u32;
    s.nrt_past_due_balance = now.nrt.past_due();

    let last6 = &totals[7..];
    s.max_past_due_days_6m = last6
        .iter()
        .map(|m| cfg.days_proxy(&m.rt).max(cfg.days_proxy(&m.nrt)))
        .max()
        .unwrap_or(0);
    s.worst_payment_delay_6m = last6.iter().map(|m| cfg.installments_proxy(&m.rt)).max().unwrap_or(0);

    // month-over-month events for months t-11 ..= t (index 1..=12)
    let mut closed_nrt = 0;
    let mut closed_pd0 = 0;
    for i in 1..=12 {
        let (prev, cur) = (&totals[i - 1], &totals[i]);
        if cur.nrt_granted < prev.nrt_granted {
            closed_nrt += 1;
        }
        let clean = |a: &PastDueBalances, b: &PastDueBalances| a.past_due() == 0.0 && b.past_due() == 0.0;
        if (cur.nrt_granted < prev.nrt_granted && clean(&prev.nrt, &cur.nrt))
            || (cur.rt_granted < prev.rt_granted && clean(&prev.rt, &cur.rt))
        {
            closed_pd0 += 1;
        }
    }
    s.nrt_contracts_12m = closed_nrt;
    s.past_due_0_contracts_12m = closed_pd0;

    // maturity increases not followed by the balance reaching zero
    let mut c3 = 0;
    let mut c12 = 0;
    for i in 1..=12 {
        if totals[i].rt_granted > totals[i - 1].rt_granted
            && totals[i + 1..].iter().all(|m| m.rt_granted > 0.0)
        {
            // index 12 is the reference month, offset 0
            if 12 - i < 3 {
                c3 += 1;
            } else {
                c12 += 1;
            }
        }
    }
    s.contracts_3m = c3;
    s.contracts_4_12m = c12;

    s.past_due_0_contracts = current
        .iter()
        .filter(|l| l.is_mapped() && l.bucket() == Bucket::Other && l.past_due_amount == 0.0)
        .count() as u32;

    let codes = h.phenomena_within(t, 12);
    s.def_no = u32::from(codes.contains(cfg.npl_code.as_str()));
    let now_codes = h.phenomena_within(t, 1);
    s.special_status = if cfg.insolvency_codes.iter().any(|c| now_codes.contains(c.as_str())) {
        SpecialStatus::Insolvency
    } else if cfg.dispute_codes.iter().any(|c| now_codes.contains(c.as_str())) {
        SpecialStatus::Dispute
    } else {
        SpecialStatus::None
    };
    s.validate()?;
    Ok(s)
}

/// Lines outside the maturity and revocable categories, kept for audit.
pub fn unmapped_lines(h: &CrMonthlyHistory) -> impl Iterator<Item = &CrCreditLine> {
    h.months.iter().flat_map(|(_, l)| l.iter()).filter(|l| !l.is_mapped())
}

pub fn read_lines_csv(path: &Path) -> Result<Vec<CrCreditLine>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        let l: CrCreditLine = row?;
        l.validate()?;
        out.push(l);
    }
    Ok(out)
}

pub fn write_lines_csv<'a>(path: &Path, lines: impl IntoIterator<Item = &'a CrCreditLine>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for l in lines {
        w.serialize(l)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct PhenomenonRow {
    company_id: String,
    reference_month: YearMonth,
    code: String,
}

pub fn read_phenomena_csv(path: &Path) -> Result<Vec<(String, YearMonth, String)>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize::<PhenomenonRow>()
        .map(|row| {
            let row = row?;
            Ok((row.company_id, row.reference_month, row.code))
        })
        .collect()
}

pub fn write_phenomena_csv(path: &Path, rows: &[(String, YearMonth, String)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["company_id", "reference_month", "code"])?;
    for (c, m, code) in rows {
        w.write_record([c.clone(), m.to_string(), code.clone()])?;
    }
    w.flush()?;
    Ok(())
}

pub const LEGAL_TYPE_FILE: &str = "legal_type.csv";
pub const PROTEST_FILE: &str = "protest.csv";
pub const SECTOR_FILE: &str = "sector.csv";

#[derive(Debug, Serialize, Deserialize)]
struct LegalRow {
    company_id: String,
    legal_type: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct ProtestRow {
    company_id: String,
    protest_present: u8,
}

#[derive(Debug, Serialize, Deserialize)]
struct SectorRow {
    company_id: String,
    sector_0: f64,
    sector_1: f64,
    sector_2: f64,
    sector_3: f64,
    sector_4: f64,
}

impl Lookups {
    /// Reads `legal_type.csv`, `protest.csv` and the optional `sector.csv`
    /// from a directory.
    pub fn read_dir(dir: &Path) -> Result<Lookups> {
        let mut out = Lookups::default();
        for row in csv::Reader::from_path(dir.join(LEGAL_TYPE_FILE))?.deserialize::<LegalRow>() {
            let row = row?;
            out.legal_type.insert(row.company_id, row.legal_type.parse()?);
        }
        for row in csv::Reader::from_path(dir.join(PROTEST_FILE))?.deserialize::<ProtestRow>() {
            let row = row?;
            out.protest.insert(row.company_id, row.protest_present != 0);
        }
        let sector = dir.join(SECTOR_FILE);
        if sector.exists() {
            for row in csv::Reader::from_path(sector)?.deserialize::<SectorRow>() {
                let r = row?;
                out.sector
                    .insert(r.company_id, [r.sector_0, r.sector_1, r.sector_2, r.sector_3, r.sector_4]);
            }
        }
        Ok(out)
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut ids: Vec<&String> = self.legal_type.keys().collect();
        ids.sort();
        let mut w = csv::Writer::from_path(dir.join(LEGAL_TYPE_FILE))?;
        for id in &ids {
            w.serialize(LegalRow {
                company_id: id.to_string(),
                legal_type: self.legal_type[*id].as_str().into(),
            })?;
        }
        w.flush()?;
        let mut ids: Vec<&String> = self.protest.keys().collect();
        ids.sort();
        let mut w = csv::Writer::from_path(dir.join(PROTEST_FILE))?;
        for id in &ids {
            w.serialize(ProtestRow {
                company_id: id.to_string(),
                protest_present: u8::from(self.protest[*id]),
            })?;
        }
        w.flush()?;
        let mut ids: Vec<&String> = self.sector.keys().collect();
        ids.sort();
        let mut w = csv::Writer::from_path(dir.join(SECTOR_FILE))?;
        for id in &ids {
            let v = self.sector[*id];
            w.serialize(SectorRow {
                company_id: id.to_string(),
                sector_0: v[0],
                sector_1: v[1],
                sector_2: v[2],
                sector_3: v[3],
                sector_4: v[4],
            })?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ym(y: i32, m: u8) -> YearMonth {
        YearMonth::new(y, m).unwrap()
    }

    fn line(cat: CrCategory, status: u32, granted: f64, used: f64, past_due: f64, at: YearMonth) -> CrCreditLine {
        let (o, r) = match cat {
            CrCategory::RevocableRisk => (OriginalDuration::NotApplicable, RemainingDuration::NotApplicable),
            _ => (OriginalDuration::Y1to5, RemainingDuration::Gt1y),
        };
        CrCreditLine {
            company_id: "c".into(),
            reference_month: at,
            category: cat,
            status_code: status,
            granted,
            used,
            past_due_amount: past_due,
            original_duration: o,
            remaining_duration: r,
        }
    }

    fn lookups() -> Lookups {
        let mut l = Lookups::default();
        l.legal_type.insert("c".into(), LegalType::SC);
        l.protest.insert("c".into(), false);
        l
    }

    #[test]
    fn aggregation_examples() {
        let t = ym(2020, 1);
        let r = aggregate_past_due(&[line(CrCategory::MaturityRisk, 827, 1000.0, 1000.0, 0.0, t)]).unwrap();
        assert_eq!(r.pd180, 1000.0);
        let r = aggregate_past_due(&[line(CrCategory::MaturityRisk, 826, 500.0, 500.0, 0.0, t)]).unwrap();
        assert_eq!(r.pd90, 500.0);
        assert_eq!(aggregate_past_due(&[]).unwrap(), PastDueBalances::default());
        let r = aggregate_past_due(&[line(CrCategory::MaturityRisk, 100, 800.0, 700.0, 200.0, t)]).unwrap();
        assert_eq!((r.pd30, r.pd0), (200.0, 500.0));
        assert!(matches!(
            aggregate_past_due(&[line(CrCategory::MaturityRisk, 100, 800.0, 100.0, 200.0, t)]),
            Err(Error::InconsistentAmounts(_))
        ));
    }

    #[test]
    fn materiality_table() {
        assert!(!apply_materiality(400.0, 100_000.0, 500.0, 0.01));
        assert!(!apply_materiality(600.0, 100_000.0, 500.0, 0.01));
        assert!(apply_materiality(2000.0, 100_000.0, 500.0, 0.01));
        assert!(apply_materiality(500.0, 50_000.0, 500.0, 0.01));
        assert!(apply_materiality(600.0, 0.0, 500.0, 0.01));
    }

    #[test]
    fn single_month_revocable_line() {
        let t = ym(2020, 12);
        let h = CrMonthlyHistory {
            company_id: "c".into(),
            months: vec![(t, vec![line(CrCategory::RevocableRisk, 100, 10_000.0, 4000.0, 0.0, t)])],
            phenomena: BTreeMap::new(),
        };
        match map_to_features(&h, &lookups(), &MappingConfig::default()) {
            Err(Error::InsufficientHistory(f)) => assert!(f.contains(&"nrt_contracts_12m".to_string())),
            other => panic!("unexpected {other:?}"),
        }
        // pad the window with empty months ahead of the line
        let mut h = h;
        h.months.insert(0, (t.add_months(-12), vec![]));
        let s = map_to_features(&h, &lookups(), &MappingConfig::default()).unwrap();
        assert_eq!(s.nrt_balance, 10_000.0);
        assert_eq!(s.nrt_used, 4000.0);
        let k = crate::features::make_kpis(&s, &Default::default());
        assert_eq!(k.draw_ratio_nrt, 0.4);
    }

    #[test]
    fn one_revocable_decrease_marks_closures() {
        let t = ym(2021, 6);
        let mut months = Vec::new();
        for o in (0..=12).rev() {
            let m = t.add_months(-o);
            let mut lines = vec![line(CrCategory::RevocableRisk, 100, 5000.0, 1000.0, 0.0, m)];
            if o > 4 {
                lines.push(line(CrCategory::RevocableRisk, 100, 3000.0, 0.0, 0.0, m));
            }
            months.push((m, lines));
        }
        let mut phenomena = BTreeMap::new();
        phenomena.insert(t.add_months(-3), BTreeSet::from([NPL_PHENOMENON.to_string()]));
        let h = CrMonthlyHistory { company_id: "c".into(), months, phenomena };
        let s = map_to_features(&h, &lookups(), &MappingConfig::default()).unwrap();
        assert_eq!(s.nrt_contracts_12m, 1);
        assert_eq!(s.past_due_0_contracts_12m, 1);
        assert_eq!(s.def_no, 1);
        assert_eq!(s.nrt_contracts, 1);
        assert_eq!(s.contracts_3m + s.contracts_4_12m, 0);
    }

    #[test]
    fn days_proxy_respects_materiality() {
        let cfg = MappingConfig::default();
        let pd = PastDueBalances { pd0: 100_000.0, pd30: 600.0, pd90: 0.0, pd180: 0.0 };
        assert_eq!(cfg.days_proxy(&pd), 0);
        let pd = PastDueBalances { pd0: 10_000.0, pd30: 0.0, pd90: 0.0, pd180: 2000.0 };
        assert_eq!(cfg.days_proxy(&pd), 180);
        assert_eq!(cfg.installments_proxy(&pd), 6);
    }

    proptest! {
        #[test]
        fn parts_rebuild_total(lines in prop::collection::vec((0usize..4, 1.0f64..1e5, 0.0f64..1.0), 0..12)) {
            let codes = [827u32, 826, 100, 33];
            let t = ym(2020, 1);
            let ls: Vec<CrCreditLine> = lines
                .iter()
                .map(|&(c, used, f)| line(CrCategory::MaturityRisk, codes[c], used, used, used * f, t))
                .collect();
            let pd = aggregate_past_due(&ls).unwrap();
            let total: f64 = ls.iter().map(|l| l.used).sum();
            prop_assert!((pd.total() - total).abs() <= 1e-9 * total.max(1.0));
        }

        #[test]
        fn materiality_is_monotone(a in 0.0f64..1e5, b in 0.0f64..1e5, bal in 0.0f64..1e7) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            if apply_materiality(lo, bal, 500.0, 0.01) {
                prop_assert!(apply_materiality(hi, bal, 500.0, 0.01));
            }
        }
    }
}
