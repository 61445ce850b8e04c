//! Deterministic synthetic companies with a bureau snapshot, a register
//! credit-line history and the true default outcome.
//!
//! Each company draws its class first and then a latent risk
//! `z ~ N(latent_signal * y, 1)`, so the latent score has AUC
//! `Φ(latent_signal / √2)`. Credit lines are generated from `z`; the bureau
//! sees a random subset of them and the register sees all.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::booster::sigmoid;
use crate::crbridge::{
    CrCategory, CrCreditLine, Lookups, OriginalDuration, RemainingDuration, NPL_PHENOMENON, STATUS_180, STATUS_90,
};
use crate::data::{CompanySnapshot, LegalType, PriorStatus, SpecialStatus, YearMonth};
use crate::error::{invalid, Result};
use crate::rng::substream;
use crate::stats::StatusRow;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n_companies: usize,
    pub vintages: Vec<i32>,
    /// Mean shift of the latent risk between defaulters and the rest.
    pub latent_signal: f64,
    pub base_default_rate: f64,
    pub seed: u64,
    /// Probability that a credit line is missing from the bureau view.
    pub cr_noise: f64,
    pub reference_month: u8,
    pub private_share: f64,
    pub prior_insolvent_share: f64,
    /// Also emit register histories, lookups and horizon statuses.
    pub emit_cr: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_companies: 10_000,
            vintages: vec![2018, 2019, 2020, 2021, 2022],
            latent_signal: signal_for_auc(0.90),
            base_default_rate: 0.035,
            seed: 0,
            cr_noise: 0.2,
            reference_month: 12,
            private_share: 0.02,
            prior_insolvent_share: 0.005,
            emit_cr: false,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_companies == 0 {
            return Err(invalid("n_companies must be positive"));
        }
        if self.vintages.is_empty() {
            return Err(invalid("at least one vintage required"));
        }
        if !(self.base_default_rate > 0.0 && self.base_default_rate < 1.0) {
            return Err(invalid("base_default_rate must lie in (0,1)"));
        }
        if !(self.latent_signal >= 0.0 && self.latent_signal.is_finite()) {
            return Err(invalid("latent_signal must be finite and non-negative"));
        }
        for (name, v) in [
            ("cr_noise", self.cr_noise),
            ("private_share", self.private_share),
            ("prior_insolvent_share", self.prior_insolvent_share),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(invalid(format!("{name} must lie in [0,1)")));
            }
        }
        YearMonth::new(self.vintages[0], self.reference_month)?;
        Ok(())
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Bi-normal AUC of the latent score.
pub fn theoretical_auc(latent_signal: f64) -> f64 {
    std_normal().cdf(latent_signal / std::f64::consts::SQRT_2)
}

/// Latent signal that yields the given bi-normal AUC.
pub fn signal_for_auc(auc: f64) -> f64 {
    std::f64::consts::SQRT_2 * std_normal().inverse_cdf(auc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub company_id: String,
    pub reference_date: YearMonth,
    pub target: u8,
    pub latent: f64,
}

#[derive(Debug, Clone, Default)]
pub struct SyntheticData {
    pub bureau: Vec<CompanySnapshot>,
    pub truth: Vec<Truth>,
    pub prior: PriorStatus,
    pub cr_lines: Vec<CrCreditLine>,
    pub phenomena: Vec<(String, YearMonth, String)>,
    pub lookups: Lookups,
    pub statuses: Vec<StatusRow>,
}

#[derive(Debug, Clone)]
struct Line {
    category: CrCategory,
    mortgage: bool,
    granted: f64,
    used: f64,
    /// Opened at `t - o`; `None` for lines older than the window.
    open: Option<i32>,
    /// Absent from `t - o` onwards.
    close: Option<i32>,
    days: u32,
    installments: u32,
    npl: Option<i32>,
    visible: bool,
}

impl Line {
    fn open_at(&self, o: i32) -> bool {
        self.open.is_none_or(|a| o <= a) && self.close.is_none_or(|c| o > c)
    }

    fn open_now(&self) -> bool {
        self.open_at(0)
    }

    fn delinquent(&self) -> bool {
        self.days > 0 || self.installments > 0
    }

    fn status_code(&self, rng: &mut ChaCha8Rng) -> u32 {
        let days = self.days.max(self.installments * 30);
        if days > 90 {
            *STATUS_180.choose(rng).expect("nonempty")
        } else if days > 30 {
            *STATUS_90.choose(rng).expect("nonempty")
        } else {
            100
        }
    }

    /// Past-due contribution of the line at the reference month.
    fn past_due(&self) -> f64 {
        let days = self.days.max(self.installments * 30);
        if days > 30 {
            self.used
        } else if days > 0 {
            0.6 * self.used
        } else {
            0.0
        }
    }
}

struct Company {
    id: String,
    t: YearMonth,
    y: u8,
    z: f64,
    legal: LegalType,
    sector: [f64; 5],
    protest: bool,
    private: bool,
    dispute: bool,
    prior_insolvent: bool,
    lines: Vec<Line>,
}

/// Draws a free month offset in `0..12` for a category event.
const NEW_RT_RATE: f64 = 1.2;

fn free_offset(rng: &mut ChaCha8Rng, used: &mut BTreeSet<i32>) -> Option<i32> {
    let free: Vec<i32> = (0..12).filter(|o| !used.contains(o)).collect();
    let o = *free.choose(rng)?;
    used.insert(o);
    Some(o)
}

fn company(cfg: &GeneratorConfig, i: usize) -> Company {
    let mut rng = substream(cfg.seed, i as u64);
    let y = u8::from(rng.random::<f64>() < cfg.base_default_rate);
    let z: f64 = rng.sample::<f64, _>(StandardNormal) + cfg.latent_signal * f64::from(y);
    let year = cfg.vintages[rng.random_range(0..cfg.vintages.len())];
    let t = YearMonth::new(year, cfg.reference_month).expect("validated month");
    let legal = LegalType::ALL[rng.random_range(0..3)];
    let mut sector = [0.0; 5];
    for v in sector.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    sector[0] += 0.3 * z;
    let protest = rng.random::<f64>() < sigmoid(-4.0 + 0.8 * z);
    let private = rng.random::<f64>() < cfg.private_share;
    let dispute = rng.random::<f64>() < 0.01;
    let prior_insolvent = rng.random::<f64>() < cfg.prior_insolvent_share;
    let size: f64 = LogNormal::new(11.0, 0.8).expect("valid").sample(&mut rng);
    let noise = |rng: &mut ChaCha8Rng, sd: f64| sd * rng.sample::<f64, _>(StandardNormal);

    let n_rt = Poisson::new(1.5).expect("valid").sample(&mut rng) as usize;
    let n_nrt = 1 + Poisson::new(1.0).expect("valid").sample(&mut rng) as usize;
    let mut events_rt = BTreeSet::new();
    let mut events_nrt = BTreeSet::new();
    let mut lines = Vec::new();
    let open_rate = 0.1 + 0.15 * sigmoid(z);
    for k in 0..n_rt + n_nrt {
        let rt = k < n_rt;
        let q = z + noise(&mut rng, 0.7);
        let mut l = if rt {
            let mortgage = rng.random::<f64>() < 0.35;
            let granted = size * (noise(&mut rng, 0.5) - 0.3).exp() * if mortgage { 3.0 } else { 1.0 };
            let used = granted * rng.random_range(0.4..1.0);
            let installments = if q > 1.0 { (1 + ((q - 1.0) * 2.0) as u32).min(6) } else { 0 };
            Line {
                category: CrCategory::MaturityRisk,
                mortgage,
                granted,
                used,
                open: None,
                close: None,
                days: 0,
                installments,
                npl: None,
                visible: true,
            }
        } else {
            let granted = size * 0.4 * noise(&mut rng, 0.5).exp();
            let draw = sigmoid(-0.3 + 1.2 * z + noise(&mut rng, 0.5));
            let days = if q > 1.0 { (5 + ((q - 1.0) * 70.0) as u32).min(180) } else { 0 };
            Line {
                category: CrCategory::RevocableRisk,
                mortgage: false,
                granted,
                used: granted * draw,
                open: None,
                close: None,
                days,
                installments: 0,
                npl: None,
                visible: true,
            }
        };
        if l.delinquent() {
            l.used = l.used.max(l.granted.min(2000.0));
        }
        if rng.random::<f64>() < sigmoid(-5.5 + 1.5 * z) {
            l.npl = Some(rng.random_range(0..12));
        }
        if rng.random::<f64>() < open_rate {
            let ev = if rt { &mut events_rt } else { &mut events_nrt };
            l.open = free_offset(&mut rng, ev);
        }
        l.visible = rng.random::<f64>() >= cfg.cr_noise;
        lines.push(l);
    }
    // maturity lines opened inside the window
    let n_new = Poisson::new(NEW_RT_RATE).expect("valid").sample(&mut rng) as usize;
    for _ in 0..n_new {
        let Some(open) = free_offset(&mut rng, &mut events_rt) else { break };
        let granted = size * 0.5 * noise(&mut rng, 0.5).exp();
        lines.push(Line {
            category: CrCategory::MaturityRisk,
            mortgage: false,
            granted,
            used: granted * rng.random_range(0.8..1.0),
            open: Some(open),
            close: None,
            days: 0,
            installments: 0,
            npl: None,
            visible: rng.random::<f64>() >= cfg.cr_noise,
        });
    }
    // lines closed inside the window, fewer for riskier companies
    let n_closed = Poisson::new(0.9 * (-0.4 * z).exp()).expect("valid").sample(&mut rng) as usize;
    for _ in 0..n_closed {
        let rt = rng.random::<f64>() < 0.5;
        let ev = if rt { &mut events_rt } else { &mut events_nrt };
        let Some(close) = free_offset(&mut rng, ev) else { continue };
        let granted = size * 0.3 * noise(&mut rng, 0.5).exp();
        lines.push(Line {
            category: if rt { CrCategory::MaturityRisk } else { CrCategory::RevocableRisk },
            mortgage: false,
            granted,
            used: granted * 0.5,
            open: None,
            close: Some(close),
            days: 0,
            installments: 0,
            npl: None,
            visible: rng.random::<f64>() >= cfg.cr_noise,
        });
    }
    Company {
        id: format!("C{i:07}"),
        t,
        y,
        z,
        legal,
        sector,
        protest,
        private,
        dispute,
        prior_insolvent,
        lines,
    }
}

fn bureau_snapshot(c: &Company) -> CompanySnapshot {
    let mut s = CompanySnapshot::empty(c.id.clone(), c.t);
    s.legal_type = c.legal;
    s.sector_vector = c.sector;
    s.protest_present = c.protest;
    s.is_private_individual = c.private;
    if c.dispute {
        s.special_status = SpecialStatus::Dispute;
    }
    for l in c.lines.iter().filter(|l| l.visible) {
        let rt = l.category == CrCategory::MaturityRisk;
        if l.npl.is_some() {
            s.def_no += 1;
        }
        if !l.open_now() {
            if l.close.is_some() {
                s.past_due_0_contracts_12m += 1;
                if !rt {
                    s.nrt_contracts_12m += 1;
                }
            }
            continue;
        }
        if rt {
            if l.mortgage {
                s.rt_mortgages_balance += l.granted;
            } else {
                s.rt_non_mortgages_balance += l.granted;
            }
            s.worst_payment_delay_6m = s.worst_payment_delay_6m.max(l.installments);
            match l.open {
                Some(o) if o <= 2 => s.contracts_3m += 1,
                Some(_) => s.contracts_4_12m += 1,
                None => {}
            }
        } else {
            s.nrt_balance += l.granted;
            s.nrt_used += l.used;
            s.nrt_contracts += 1;
            s.nrt_past_due_balance += l.past_due();
        }
        s.max_past_due_days_6m = s.max_past_due_days_6m.max(l.days.max(l.installments * 30));
        if !l.delinquent() {
            s.past_due_0_contracts += 1;
        }
    }
    s
}

fn cr_lines(c: &Company, rng: &mut ChaCha8Rng) -> Vec<CrCreditLine> {
    let mut out = Vec::new();
    let codes: Vec<u32> = c.lines.iter().map(|l| l.status_code(rng)).collect();
    for o in (0..=12).rev() {
        let m = c.t.add_months(-o);
        // every monthly report carries an information-section record
        out.push(CrCreditLine {
            company_id: c.id.clone(),
            reference_month: m,
            category: CrCategory::Info,
            status_code: 0,
            granted: 0.0,
            used: 0.0,
            past_due_amount: 0.0,
            original_duration: OriginalDuration::NotApplicable,
            remaining_duration: RemainingDuration::NotApplicable,
        });
        for (l, &code) in c.lines.iter().zip(&codes) {
            if !l.open_at(o) {
                continue;
            }
            let (od, rd) = match (l.category, l.mortgage) {
                (CrCategory::RevocableRisk, _) => (OriginalDuration::NotApplicable, RemainingDuration::NotApplicable),
                (_, true) => (OriginalDuration::Gt5y, RemainingDuration::Gt1y),
                _ => (OriginalDuration::Y1to5, RemainingDuration::Lt1y),
            };
            let now = o == 0;
            out.push(CrCreditLine {
                company_id: c.id.clone(),
                reference_month: m,
                category: l.category,
                status_code: if now { code } else { 100 },
                granted: l.granted,
                used: l.used,
                past_due_amount: if now { l.past_due() } else { 0.0 },
                original_duration: od,
                remaining_duration: rd,
            });
        }
    }
    // an out-of-scope line the mapping must ignore
    if rng.random::<f64>() < 0.2 {
        out.push(CrCreditLine {
            company_id: c.id.clone(),
            reference_month: c.t,
            category: CrCategory::SelfLiquidating,
            status_code: 100,
            granted: 5000.0,
            used: 2500.0,
            past_due_amount: 0.0,
            original_duration: OriginalDuration::Lt1y,
            remaining_duration: RemainingDuration::Lt1y,
        });
    }
    out
}

fn statuses(c: &Company, rng: &mut ChaCha8Rng) -> Vec<StatusRow> {
    let default_month = (c.y == 1).then(|| rng.random_range(1..=12));
    let npl = rng.random::<f64>() < 0.3;
    (1..=12)
        .map(|k| {
            let hit = default_month.is_some_and(|d| k >= d);
            StatusRow {
                company_id: c.id.clone(),
                reference_date: c.t.add_months(k),
                special_status: SpecialStatus::None,
                max_past_due_days: if hit && !npl { 120 } else { 0 },
                unpaid_installments: 0,
                npl: u8::from(hit && npl),
            }
        })
        .collect()
}

pub fn generate(cfg: &GeneratorConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let per: Vec<_> = (0..cfg.n_companies)
        .into_par_iter()
        .map(|i| {
            let c = company(cfg, i);
            let snap = bureau_snapshot(&c);
            let extra = cfg.emit_cr.then(|| {
                let mut rng = substream(cfg.seed ^ 0x5eed_c0de, i as u64);
                (cr_lines(&c, &mut rng), statuses(&c, &mut rng))
            });
            (c, snap, extra)
        })
        .collect();
    let mut out = SyntheticData::default();
    for (c, snap, extra) in per {
        out.truth.push(Truth {
            company_id: c.id.clone(),
            reference_date: c.t,
            target: c.y,
            latent: c.z,
        });
        let prior_status = if c.prior_insolvent { SpecialStatus::Insolvency } else { SpecialStatus::None };
        out.prior.insert(c.id.clone(), c.t.add_months(-12), prior_status);
        if let Some((lines, st)) = extra {
            out.cr_lines.extend(lines);
            out.statuses.extend(st);
            for l in &c.lines {
                if let Some(o) = l.npl {
                    out.phenomena.push((c.id.clone(), c.t.add_months(-o), NPL_PHENOMENON.into()));
                }
            }
            if c.dispute {
                out.phenomena.push((c.id.clone(), c.t, "DISPUTE".into()));
            }
            out.lookups.legal_type.insert(c.id.clone(), c.legal);
            out.lookups.protest.insert(c.id.clone(), c.protest);
            out.lookups.sector.insert(c.id.clone(), c.sector);
        }
        out.bureau.push(snap);
    }
    out.phenomena.sort();
    out.phenomena.dedup();
    Ok(out)
}

pub fn write_truth_csv(path: &std::path::Path, rows: &[Truth]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_truth_csv(path: &std::path::Path) -> Result<Vec<Truth>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Into::into)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crbridge::{build_histories, map_to_features, MappingConfig};
    use crate::metrics::auc;

    #[test]
    fn no_signal_keeps_base_rate() {
        let cfg = GeneratorConfig { n_companies: 20_000, latent_signal: 0.0, seed: 4, ..Default::default() };
        let d = generate(&cfg).unwrap();
        let rate = d.truth.iter().map(|t| f64::from(t.target)).sum::<f64>() / 20_000.0;
        let sd = (0.035f64 * 0.965 / 20_000.0).sqrt();
        assert!((rate - 0.035).abs() < 2.0 * sd + 1e-12, "rate {rate}");
    }

    #[test]
    fn latent_auc_matches_closed_form() {
        let cfg = GeneratorConfig { n_companies: 100_000, seed: 9, ..Default::default() };
        assert!((theoretical_auc(cfg.latent_signal) - 0.90).abs() < 1e-9);
        let d = generate(&cfg).unwrap();
        let z: Vec<f64> = d.truth.iter().map(|t| t.latent).collect();
        let y: Vec<u8> = d.truth.iter().map(|t| t.target).collect();
        let a = auc(&z, &y).unwrap();
        assert!((a - 0.90).abs() < 0.01, "auc {a}");
    }

    #[test]
    fn deterministic_and_cr_dominates_bureau() {
        let cfg = GeneratorConfig { n_companies: 300, seed: 2, cr_noise: 0.3, emit_cr: true, ..Default::default() };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.bureau, b.bureau);
        assert_eq!(a.cr_lines, b.cr_lines);
        let hist = build_histories(a.cr_lines.clone(), &a.phenomena).unwrap();
        assert_eq!(hist.len(), 300);
        for (h, s) in hist.iter().zip(&a.bureau) {
            assert_eq!(h.company_id, s.company_id);
            let m = map_to_features(h, &a.lookups, &MappingConfig::default()).unwrap();
            assert!(m.nrt_balance >= s.nrt_balance);
            assert!(m.nrt_used >= s.nrt_used);
            assert!(m.rt_balance() >= s.rt_balance() - 1e-6);
            assert!(m.nrt_past_due_balance >= s.nrt_past_due_balance - 1e-6);
            assert!(m.nrt_contracts >= s.nrt_contracts);
            assert!(m.nrt_contracts_12m >= s.nrt_contracts_12m);
            assert!(m.contracts_3m >= s.contracts_3m);
            assert!(m.past_due_0_contracts >= s.past_due_0_contracts);
        }
    }
}
