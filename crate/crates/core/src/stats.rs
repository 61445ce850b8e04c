//! Paired tests, rank correlations, Benjamini–Yekutieli adjustment, the
//! mapping-validation battery and the backtest harness.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::erf::erfc;

use crate::data::{derive_target, CompanySnapshot, SpecialStatus, TargetRule, YearMonth};
use crate::error::{invalid, Error, Result};
use crate::features::{snapshot_value, KpiConfig};
use crate::metrics::{average_ranks, evaluate_scores, MetricReport};
use crate::rating::upper_tail;

/// Effective sample sizes up to this use exact null distributions.
pub const EXACT_LIMIT: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    WilcoxonExact,
    WilcoxonNormal,
    McnemarExact,
    McnemarChi2,
    Spearman,
    Kendall,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    RejectNull,
    FailToReject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub name: String,
    pub statistic: f64,
    pub p_raw: f64,
    pub p_adjusted: Option<f64>,
    pub decision: Decision,
    pub method: Method,
}

impl TestReport {
    fn new(name: &str, statistic: f64, p: f64, method: Method, alpha: f64) -> Self {
        let p = p.clamp(0.0, 1.0);
        TestReport {
            name: name.into(),
            statistic,
            p_raw: p,
            p_adjusted: None,
            decision: decide(p, alpha),
            method,
        }
    }
}

fn decide(p: f64, alpha: f64) -> Decision {
    if p < alpha {
        Decision::RejectNull
    } else {
        Decision::FailToReject
    }
}

pub const ALPHA: f64 = 0.05;

/// Standard normal upper tail.
fn norm_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    TwoSided,
    Greater,
    Less,
}

/// Signed-rank test of "x tends to exceed y". Zero differences are
/// dropped and tied |d| share average ranks.
pub fn wilcoxon_one_sided(x: &[f64], y: &[f64]) -> Result<TestReport> {
    if x.len() != y.len() {
        return Err(invalid("wilcoxon: samples differ in length"));
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
    if d.iter().any(|v| v.is_nan()) {
        return Err(invalid("wilcoxon: NaN difference"));
    }
    if d.is_empty() {
        return Err(Error::AllPairsTied);
    }
    let n = d.len();
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    if n <= EXACT_LIMIT {
        // doubled ranks are integers even with ties
        let r2: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let total: usize = r2.iter().sum();
        let mut counts = vec![0.0f64; total + 1];
        counts[0] = 1.0;
        for &r in &r2 {
            for s in (r..=total).rev() {
                counts[s] += counts[s - r];
            }
        }
        let obs = (2.0 * w_plus).round() as usize;
        let p = counts[obs..].iter().sum::<f64>() / 2f64.powi(n as i32);
        return Ok(TestReport::new("wilcoxon", w_plus, p, Method::WilcoxonExact, ALPHA));
    }
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut ties = 0.0;
    let mut sorted = abs.clone();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < n {
        let j = sorted[i..].iter().take_while(|v| **v == sorted[i]).count();
        let t = j as f64;
        ties += t * t * t - t;
        i += j;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - ties / 48.0;
    let z = (w_plus - mean - 0.5) / var.sqrt();
    Ok(TestReport::new("wilcoxon", w_plus, norm_sf(z), Method::WilcoxonNormal, ALPHA))
}

/// Discordant counts `b` (x=1, y=0) and `c` (x=0, y=1).
pub fn discordant(pairs: &[(bool, bool)]) -> (u64, u64) {
    pairs.iter().fold((0, 0), |(b, c), &(x, y)| match (x, y) {
        (true, false) => (b + 1, c),
        (false, true) => (b, c + 1),
        _ => (b, c),
    })
}

/// Two-sided McNemar test: exact binomial below 25 discordant pairs,
/// continuity-corrected χ² otherwise.
pub fn mcnemar(pairs: &[(bool, bool)]) -> Result<TestReport> {
    let (b, c) = discordant(pairs);
    let n = b + c;
    if n == 0 {
        return Err(Error::NoDiscordantPairs);
    }
    if (n as usize) < EXACT_LIMIT {
        let k = b.min(c);
        // P(X <= k) = P(X >= n - k) by symmetry
        let p = (2.0 * upper_tail(n - k, n, 0.5)).min(1.0);
        return Ok(TestReport::new("mcnemar", k as f64, p, Method::McnemarExact, ALPHA));
    }
    let diff = (b as f64 - c as f64).abs();
    let chi2 = (diff - 1.0).max(0.0).powi(2) / n as f64;
    let p = erfc((chi2 / 2.0).sqrt());
    Ok(TestReport::new("mcnemar", chi2, p, Method::McnemarChi2, ALPHA))
}

/// One-sided McNemar test of "x = 1 more often than y".
pub fn mcnemar_one_sided(pairs: &[(bool, bool)]) -> Result<TestReport> {
    let (b, c) = discordant(pairs);
    let n = b + c;
    if n == 0 {
        return Err(Error::NoDiscordantPairs);
    }
    if (n as usize) < EXACT_LIMIT {
        let p = upper_tail(b, n, 0.5);
        return Ok(TestReport::new("mcnemar", b as f64, p, Method::McnemarExact, ALPHA));
    }
    let diff = b as f64 - c as f64;
    let chi2 = (diff.abs() - 1.0).max(0.0).powi(2) / n as f64;
    let z = (diff - 1.0) / (n as f64).sqrt();
    Ok(TestReport::new("mcnemar", chi2, norm_sf(z), Method::McnemarChi2, ALPHA))
}

fn tail_p(z_or_t: f64, alt: Alternative, sf: impl Fn(f64) -> f64) -> f64 {
    match alt {
        Alternative::Greater => sf(z_or_t),
        Alternative::Less => sf(-z_or_t),
        Alternative::TwoSided => (2.0 * sf(z_or_t.abs())).min(1.0),
    }
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

fn check_pairs(x: &[f64], y: &[f64], min_n: usize, what: &str) -> Result<()> {
    if x.len() != y.len() {
        return Err(invalid(format!("{what}: samples differ in length")));
    }
    if x.len() < min_n {
        return Err(invalid(format!("{what}: needs at least {min_n} pairs")));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(invalid(format!("{what}: NaN value")));
    }
    for (v, name) in [(x, "x"), (y, "y")] {
        if v.iter().all(|a| *a == v[0]) {
            return Err(Error::Degenerate(format!("{what}: {name} is constant")));
        }
    }
    Ok(())
}

/// Spearman's ρ with a Student-t p-value on `n - 2` degrees of freedom.
pub fn spearman_rho(x: &[f64], y: &[f64], alt: Alternative) -> Result<TestReport> {
    check_pairs(x, y, 3, "spearman")?;
    let rho = pearson(&average_ranks(x), &average_ranks(y));
    let df = (x.len() - 2) as f64;
    let p = if rho.abs() >= 1.0 {
        match (alt, rho > 0.0) {
            (Alternative::Greater, true) | (Alternative::Less, false) | (Alternative::TwoSided, _) => 0.0,
            _ => 1.0,
        }
    } else {
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
        tail_p(t, alt, |v| dist.sf(v))
    };
    Ok(TestReport::new("spearman", rho, p, Method::Spearman, ALPHA))
}

/// Pair and tie counts behind Kendall's τ-b.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KendallCounts {
    pub n: u64,
    /// Concordant minus discordant pairs.
    pub s: i64,
    /// Pairs tied in x, tied in y, tied in both.
    pub ties_x: u64,
    pub ties_y: u64,
    pub ties_xy: u64,
}

impl KendallCounts {
    pub fn tau_b(&self) -> f64 {
        let n0 = self.n * (self.n - 1) / 2;
        self.s as f64 / (((n0 - self.ties_x) as f64) * ((n0 - self.ties_y) as f64)).sqrt()
    }
}

fn tie_pairs(sorted: &[f64]) -> u64 {
    let mut total = 0;
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|v| **v == sorted[i]).count() as u64;
        total += j * (j - 1) / 2;
        i += j as usize;
    }
    total
}

/// Merge sort that returns the number of inversions.
fn count_swaps(v: &mut [f64], buf: &mut Vec<f64>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = count_swaps(&mut v[..mid], buf) + count_swaps(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf.push(v[j]);
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    swaps
}

/// Concordance counts in O(n log n) by sorting on x and counting
/// inversions in y.
pub fn kendall_counts(x: &[f64], y: &[f64]) -> KendallCounts {
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));
    let xs: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
    let mut ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let ties_x = tie_pairs(&xs);
    let mut ties_xy = 0;
    let mut i = 0;
    while i < n {
        let j = (i..n).take_while(|&k| xs[k] == xs[i] && ys[k] == ys[i]).count() as u64;
        ties_xy += j * (j - 1) / 2;
        i += j as usize;
    }
    let swaps = count_swaps(&mut ys, &mut Vec::with_capacity(n));
    let ties_y = tie_pairs(&ys);
    let n0 = (n * n.saturating_sub(1) / 2) as i64;
    let s = n0 - ties_x as i64 - ties_y as i64 + ties_xy as i64 - 2 * swaps as i64;
    KendallCounts { n: n as u64, s, ties_x, ties_y, ties_xy }
}

fn tie_sums(sorted: &[f64]) -> (f64, f64, f64) {
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|v| **v == sorted[i]).count();
        let t = j as f64;
        a += t * (t - 1.0) * (2.0 * t + 5.0);
        b += t * (t - 1.0);
        c += t * (t - 1.0) * (t - 2.0);
        i += j;
    }
    (a, b, c)
}

/// Kendall's τ-b with a tie-corrected normal p-value on S.
pub fn kendall_tau(x: &[f64], y: &[f64], alt: Alternative) -> Result<TestReport> {
    check_pairs(x, y, 2, "kendall")?;
    let k = kendall_counts(x, y);
    let tau = k.tau_b();
    let n = k.n as f64;
    let mut xs = x.to_vec();
    xs.sort_by(f64::total_cmp);
    let mut ys = y.to_vec();
    ys.sort_by(f64::total_cmp);
    let (tx, tx1, tx2) = tie_sums(&xs);
    let (ty, ty1, ty2) = tie_sums(&ys);
    let mut var = (n * (n - 1.0) * (2.0 * n + 5.0) - tx - ty) / 18.0 + tx1 * ty1 / (2.0 * n * (n - 1.0));
    if n > 2.0 {
        var += tx2 * ty2 / (9.0 * n * (n - 1.0) * (n - 2.0));
    }
    let z = k.s as f64 / var.sqrt();
    Ok(TestReport::new("kendall", tau, tail_p(z, alt, norm_sf), Method::Kendall, ALPHA))
}

/// Benjamini–Yekutieli adjusted p-values, in input order.
pub fn by_adjust(p: &[f64]) -> Result<Vec<f64>> {
    if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(invalid("p-values must lie in [0,1]"));
    }
    let m = p.len();
    let cm: f64 = (1..=m).map(|j| 1.0 / j as f64).sum();
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let mut out = vec![0.0; m];
    let mut running = 1.0f64;
    for (pos, &i) in idx.iter().enumerate().rev() {
        let v = m as f64 * cm * p[i] / (pos + 1) as f64;
        running = running.min(v);
        out[i] = running.min(1.0);
    }
    Ok(out)
}

/// Direction of a mapping test; `CrGreater` is the subset premise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    CrGreater,
    BureauGreater,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    Wilcoxon,
    Mcnemar,
    Spearman,
    Kendall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryEntry {
    pub feature: String,
    pub test: TestKind,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Battery {
    pub alpha: f64,
    pub tests: Vec<BatteryEntry>,
}

impl Default for Battery {
    /// The eight mapped features, each with a one-sided signed-rank test.
    fn default() -> Self {
        let tests = [
            "nrt_contracts_12m",
            "contracts_3m",
            "worst_payment_delay_6m",
            "past_due_0_contracts",
            "nrt_contracts",
            "rt_balance",
            "nrt_balance",
            "max_past_due_days_6m",
        ]
        .iter()
        .map(|f| BatteryEntry {
            feature: f.to_string(),
            test: TestKind::Wilcoxon,
            direction: Direction::CrGreater,
        })
        .collect();
        Battery { alpha: ALPHA, tests }
    }
}

/// One company's value of one feature in both sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRow {
    pub company_id: String,
    pub feature: String,
    pub bureau: f64,
    pub cr: f64,
}

/// Long-format pairs for every requested feature of companies present in
/// both sources.
pub fn pair_snapshots(bureau: &[CompanySnapshot], cr: &[CompanySnapshot], features: &[String]) -> Result<Vec<PairRow>> {
    let kpi = KpiConfig::default();
    let by_id: HashMap<&str, &CompanySnapshot> = cr.iter().map(|s| (s.company_id.as_str(), s)).collect();
    let mut out = Vec::new();
    for f in features {
        for b in bureau {
            if let Some(c) = by_id.get(b.company_id.as_str()) {
                let get = |s: &CompanySnapshot| {
                    snapshot_value(s, f, &kpi).ok_or_else(|| invalid(format!("unknown feature {f}")))
                };
                out.push(PairRow {
                    company_id: b.company_id.clone(),
                    feature: f.clone(),
                    bureau: get(b)?,
                    cr: get(c)?,
                });
            }
        }
    }
    Ok(out)
}

pub fn read_pairs_csv(path: &Path) -> Result<Vec<PairRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn write_pairs_csv(path: &Path, rows: &[PairRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs every battery test on the pairs and adjusts the p-values jointly.
pub fn run_battery(pairs: &[PairRow], battery: &Battery) -> Result<Vec<TestReport>> {
    let mut by: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in pairs {
        let e = by.entry(r.feature.as_str()).or_default();
        e.0.push(r.bureau);
        e.1.push(r.cr);
    }
    let mut reports = Vec::with_capacity(battery.tests.len());
    for t in &battery.tests {
        let (bureau, cr) = by
            .get(t.feature.as_str())
            .ok_or_else(|| invalid(format!("no pairs for {}", t.feature)))?;
        let (hi, lo) = match t.direction {
            Direction::CrGreater => (cr, bureau),
            Direction::BureauGreater => (bureau, cr),
        };
        let alt = Alternative::Greater;
        let mut rep = match t.test {
            TestKind::Wilcoxon => wilcoxon_one_sided(hi, lo)?,
            TestKind::Mcnemar => {
                let pairs: Vec<(bool, bool)> = hi.iter().zip(lo).map(|(a, b)| (*a != 0.0, *b != 0.0)).collect();
                mcnemar_one_sided(&pairs)?
            }
            TestKind::Spearman => spearman_rho(hi, lo, alt)?,
            TestKind::Kendall => kendall_tau(hi, lo, alt)?,
        };
        rep.name = t.feature.clone();
        reports.push(rep);
    }
    let adj = by_adjust(&reports.iter().map(|r| r.p_raw).collect::<Vec<_>>())?;
    for (r, a) in reports.iter_mut().zip(adj) {
        r.p_adjusted = Some(a);
        r.decision = decide(a, battery.alpha);
    }
    Ok(reports)
}

pub fn write_report_csv(path: &Path, reports: &[TestReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["feature", "method", "statistic", "p_value", "adjusted_p_value", "result"])?;
    for r in reports {
        w.write_record([
            r.name.clone(),
            serde_json::to_value(r.method)?.as_str().unwrap_or_default().to_string(),
            r.statistic.to_string(),
            format!("{:e}", r.p_raw),
            r.p_adjusted.map(|p| format!("{p:e}")).unwrap_or_else(|| "-".into()),
            match r.decision {
                Decision::RejectNull => "Reject Null".into(),
                Decision::FailToReject => "Fail to Reject".into(),
            },
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Monthly status used to label a backtest cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusRow {
    pub company_id: String,
    pub reference_date: YearMonth,
    pub special_status: SpecialStatus,
    pub max_past_due_days: u32,
    pub unpaid_installments: u32,
    pub npl: u8,
}

impl StatusRow {
    fn as_snapshot(&self) -> CompanySnapshot {
        let mut s = CompanySnapshot::empty(self.company_id.clone(), self.reference_date);
        s.special_status = self.special_status;
        s.max_past_due_days_6m = self.max_past_due_days;
        s.worst_payment_delay_6m = self.unpaid_installments;
        s.def_no = u32::from(self.npl);
        s
    }
}

pub fn read_status_csv(path: &Path) -> Result<Vec<StatusRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn write_status_csv(path: &Path, rows: &[StatusRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub metrics: MetricReport,
    /// Companies dropped for an incomplete status horizon.
    pub excluded: Vec<String>,
}

/// Labels each snapshot from the statuses over the following twelve months
/// and scores the labeled cohort with `score`.
pub fn backtest<F>(
    snapshots: &[CompanySnapshot],
    statuses: &[StatusRow],
    rule: &TargetRule,
    threshold: f64,
    beta: f64,
    score: F,
) -> Result<BacktestReport>
where
    F: Fn(&[CompanySnapshot]) -> Result<Vec<f64>>,
{
    let mut by: HashMap<&str, Vec<CompanySnapshot>> = HashMap::new();
    for s in statuses {
        by.entry(s.company_id.as_str()).or_default().push(s.as_snapshot());
    }
    let mut kept = Vec::new();
    let mut targets = Vec::new();
    let mut excluded = Vec::new();
    for s in snapshots {
        let h = by.get(s.company_id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
        match derive_target(s.reference_date, h, rule) {
            Ok(t) => {
                kept.push(s.clone());
                targets.push(t);
            }
            Err(Error::HorizonNotCovered(_)) => excluded.push(s.company_id.clone()),
            Err(e) => return Err(e),
        }
    }
    if !excluded.is_empty() {
        log::warn!("backtest: {} companies excluded for horizon gaps", excluded.len());
    }
    if kept.is_empty() {
        return Err(Error::HorizonNotCovered(format!(
            "every company lacks a complete horizon: {}",
            excluded.join(", ")
        )));
    }
    let scores = score(&kept)?;
    let metrics = evaluate_scores(&scores, &targets, threshold, beta)?;
    Ok(BacktestReport { metrics, excluded })
}
