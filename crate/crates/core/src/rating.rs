//! Rating master scale: differential-evolution binning of calibrated PDs,
//! the one-sided binomial test and the extended traffic light.

use std::fmt;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::factorial::{binomial, ln_binomial};

use crate::error::{invalid, Error, Result};
use crate::rng::substream;

pub const DEFAULT_LABELS: [&str; 9] = ["AAA", "AA", "A", "BBB", "BB", "B", "CCC", "CC", "C"];
const LOWER: f64 = 1e-6;
const UPPER: f64 = 1.0 - 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeParams {
    /// Population size; `None` means `15 (k - 1)`.
    pub population: Option<usize>,
    pub f: f64,
    pub cr: f64,
    pub max_generations: usize,
    /// Stop after this many generations without improvement.
    pub stagnation: usize,
    /// Finish with exact coordinate descent over the sample gaps.
    pub polish: bool,
}

impl Default for DeParams {
    fn default() -> Self {
        DeParams {
            population: None,
            f: 0.8,
            cr: 0.9,
            max_generations: 500,
            stagnation: 50,
            polish: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BinningConfig {
    pub k: usize,
    pub min_share: f64,
    pub labels: Option<Vec<String>>,
    pub de: DeParams,
}

impl Default for BinningConfig {
    fn default() -> Self {
        BinningConfig {
            k: 9,
            min_share: 0.005,
            labels: None,
            de: DeParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingScale {
    pub labels: Vec<String>,
    pub boundaries: Vec<f64>,
    pub class_pd: Vec<f64>,
    pub class_counts: Vec<usize>,
    /// Observed default rate per class on the fitting sample.
    pub class_default_rate: Vec<f64>,
    /// Within-class squared PD dispersion at the solution.
    pub objective: f64,
    pub min_share: f64,
}

impl RatingScale {
    /// Class index of a PD: the number of boundaries `<= pd`.
    pub fn assign(&self, pd: f64) -> usize {
        assign_class(&self.boundaries, pd)
    }

    pub fn k(&self) -> usize {
        self.labels.len()
    }
}

pub fn assign_class(boundaries: &[f64], pd: f64) -> usize {
    boundaries.partition_point(|&b| b <= pd)
}

/// Trace of one DE run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeTrace {
    pub generations: usize,
    /// Best penalized objective after each generation.
    pub best_history: Vec<f64>,
    pub polished_objective: f64,
}

/// Sorted PDs with prefix sums for O(1) class dispersion.
struct Sample {
    sorted: Vec<f64>,
    s1: Vec<f64>,
    s2: Vec<f64>,
    min_count: usize,
    penalty: f64,
}

impl Sample {
    fn new(pds: &[f64], min_share: f64) -> Self {
        let mut sorted = pds.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut s1 = vec![0.0; sorted.len() + 1];
        let mut s2 = vec![0.0; sorted.len() + 1];
        for (i, &p) in sorted.iter().enumerate() {
            s1[i + 1] = s1[i] + p;
            s2[i + 1] = s2[i] + p * p;
        }
        let n = sorted.len();
        Sample {
            sorted,
            s1,
            s2,
            min_count: ((min_share * n as f64).ceil() as usize).max(1),
            penalty: n as f64,
        }
    }

    fn sse(&self, lo: usize, hi: usize) -> f64 {
        if hi <= lo {
            return 0.0;
        }
        let a = self.s1[hi] - self.s1[lo];
        let b = self.s2[hi] - self.s2[lo];
        (b - a * a / (hi - lo) as f64).max(0.0)
    }

    fn mean(&self, lo: usize, hi: usize) -> f64 {
        (self.s1[hi] - self.s1[lo]) / (hi - lo) as f64
    }

    fn cuts(&self, boundaries: &[f64]) -> Vec<usize> {
        boundaries
            .iter()
            .map(|&b| self.sorted.partition_point(|&x| x < b))
            .collect()
    }

    /// Penalized objective of a cut vector (class `j` is
    /// `[cuts[j-1], cuts[j])`).
    fn cost_of_cuts(&self, cuts: &[usize]) -> f64 {
        let n = self.sorted.len();
        let mut j = 0.0;
        let mut violations = 0usize;
        let mut lo = 0;
        let mut prev_mean = f64::NEG_INFINITY;
        for k in 0..=cuts.len() {
            let hi = if k < cuts.len() { cuts[k] } else { n };
            if hi < lo {
                violations += 1;
                continue;
            }
            if hi - lo < self.min_count {
                violations += 1;
            }
            if hi > lo {
                let m = self.mean(lo, hi);
                if m < prev_mean {
                    violations += 1;
                }
                prev_mean = m;
                j += self.sse(lo, hi);
            }
            lo = hi;
        }
        j + self.penalty * violations as f64
    }

    fn cost(&self, boundaries: &[f64]) -> f64 {
        let ordering = boundaries.windows(2).filter(|w| w[0] >= w[1]).count();
        self.cost_of_cuts(&self.cuts(boundaries)) + self.penalty * ordering as f64
    }

    fn feasible(&self, cuts: &[usize]) -> bool {
        self.cost_of_cuts(cuts) < self.penalty
    }

    fn midpoint(&self, cut: usize) -> f64 {
        let (a, b) = (self.sorted[cut - 1], self.sorted[cut]);
        let m = a + (b - a) / 2.0;
        if m > a && m <= b {
            m
        } else {
            b
        }
    }

    /// Exact coordinate descent: each cut moves to its best position given
    /// its neighbours, until no move improves.
    fn polish(&self, cuts: &mut [usize]) {
        let n = self.sorted.len();
        let k = cuts.len();
        loop {
            let mut improved = false;
            for i in 0..k {
                let lo = if i == 0 { 0 } else { cuts[i - 1] };
                let hi = if i + 1 == k { n } else { cuts[i + 1] };
                if hi < lo + 2 * self.min_count {
                    continue;
                }
                let cost = |c: usize| self.sse(lo, c) + self.sse(c, hi);
                let mut best_c = cuts[i];
                let mut best = if cuts[i] >= lo + self.min_count && cuts[i] + self.min_count <= hi {
                    cost(cuts[i])
                } else {
                    f64::INFINITY
                };
                for c in lo + self.min_count..=hi - self.min_count {
                    if c == 0 || c == n || self.sorted[c - 1] == self.sorted[c] {
                        continue;
                    }
                    let v = cost(c);
                    if v < best - 1e-15 * best.abs().max(1e-300) {
                        best = v;
                        best_c = c;
                    }
                }
                if best_c != cuts[i] {
                    cuts[i] = best_c;
                    improved = true;
                }
            }
            if !improved {
                break;
            }
        }
    }

    /// Objective by direct summation, free of prefix-sum rounding.
    fn direct_objective(&self, cuts: &[usize]) -> f64 {
        let mut lo = 0;
        let mut j = 0.0;
        for k in 0..=cuts.len() {
            let hi = if k < cuts.len() { cuts[k] } else { self.sorted.len() };
            if hi > lo {
                let m = self.sorted[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
                j += self.sorted[lo..hi].iter().map(|p| (p - m).powi(2)).sum::<f64>();
            }
            lo = hi;
        }
        j
    }
}

fn random_individual<R: Rng>(rng: &mut R, s: &Sample, d: usize) -> Vec<f64> {
    let n = s.sorted.len();
    let mut b: Vec<f64> = sample(rng, n, d.min(n))
        .into_iter()
        .map(|i| s.sorted[i].clamp(LOWER, UPPER))
        .collect();
    while b.len() < d {
        b.push(rng.random_range(LOWER..UPPER));
    }
    b.sort_by(f64::total_cmp);
    b
}

/// Within-class dispersion of the classes induced by `boundaries`, summed
/// directly.
pub fn objective(pds: &[f64], boundaries: &[f64]) -> f64 {
    let k = boundaries.len() + 1;
    let mut groups: Vec<Vec<f64>> = vec![Vec::new(); k];
    for &p in pds {
        groups[assign_class(boundaries, p)].push(p);
    }
    groups
        .iter()
        .filter(|g| !g.is_empty())
        .map(|g| {
            let m = g.iter().sum::<f64>() / g.len() as f64;
            g.iter().map(|p| (p - m).powi(2)).sum::<f64>()
        })
        .sum()
}

pub fn de_bin(pds: &[f64], targets: &[u8], cfg: &BinningConfig, seed: u64) -> Result<RatingScale> {
    de_bin_traced(pds, targets, cfg, seed).map(|(s, _)| s)
}

/// DE rand/1/bin over the `k - 1` boundaries minimizing within-class PD
/// dispersion plus a penalty of `N` per violated constraint.
pub fn de_bin_traced(
    pds: &[f64],
    targets: &[u8],
    cfg: &BinningConfig,
    seed: u64,
) -> Result<(RatingScale, DeTrace)> {
    let k = cfg.k;
    if k < 2 {
        return Err(invalid("at least two rating classes required"));
    }
    if pds.len() != targets.len() {
        return Err(invalid("pds and targets differ in length"));
    }
    if pds.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(invalid("PDs must lie in [0,1]"));
    }
    if !(0.0..1.0).contains(&cfg.min_share) {
        return Err(invalid("min_share must lie in [0,1)"));
    }
    let labels = match &cfg.labels {
        Some(l) if l.len() == k => l.clone(),
        Some(l) => return Err(invalid(format!("{} labels for {k} classes", l.len()))),
        None if k == DEFAULT_LABELS.len() => DEFAULT_LABELS.iter().map(|s| s.to_string()).collect(),
        None => (1..=k).map(|i| format!("R{i}")).collect(),
    };
    let s = Sample::new(pds, cfg.min_share);
    let n = pds.len();
    if s.min_count * k > n {
        return Err(Error::Infeasible(format!(
            "{n} samples cannot fill {k} classes of at least {} each",
            s.min_count
        )));
    }
    let d = k - 1;
    let np = cfg.de.population.unwrap_or(15 * d).max(4);
    let mut rng = substream(seed, 0);
    let mut pop: Vec<Vec<f64>> = (0..np).map(|_| random_individual(&mut rng, &s, d)).collect();
    let mut cost: Vec<f64> = pop.par_iter().map(|b| s.cost(b)).collect();
    let best_of = |cost: &[f64]| {
        cost.iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &c)| if c < acc.1 { (i, c) } else { acc })
    };
    let mut history = Vec::new();
    let (mut best_idx, mut best) = best_of(&cost);
    let mut stagnant = 0;
    let mut generations = 0;
    for gen in 0..cfg.de.max_generations {
        let mut rng = substream(seed, gen as u64 + 1);
        let trials: Vec<Vec<f64>> = (0..np)
            .map(|i| {
                let mut pick = || loop {
                    let r = rng.random_range(0..np);
                    if r != i {
                        break r;
                    }
                };
                let r1 = pick();
                let r2 = loop {
                    let r = pick();
                    if r != r1 {
                        break r;
                    }
                };
                let r3 = loop {
                    let r = pick();
                    if r != r1 && r != r2 {
                        break r;
                    }
                };
                let j_rand = rng.random_range(0..d);
                let mut t: Vec<f64> = (0..d)
                    .map(|j| {
                        if j == j_rand || rng.random::<f64>() < cfg.de.cr {
                            (pop[r1][j] + cfg.de.f * (pop[r2][j] - pop[r3][j])).clamp(LOWER, UPPER)
                        } else {
                            pop[i][j]
                        }
                    })
                    .collect();
                t.sort_by(f64::total_cmp);
                t
            })
            .collect();
        let trial_cost: Vec<f64> = trials.par_iter().map(|b| s.cost(b)).collect();
        for (i, (t, c)) in trials.into_iter().zip(trial_cost).enumerate() {
            if c <= cost[i] {
                pop[i] = t;
                cost[i] = c;
            }
        }
        let (bi, bc) = best_of(&cost);
        generations = gen + 1;
        history.push(bc);
        if bc < best {
            best = bc;
            best_idx = bi;
            stagnant = 0;
        } else {
            stagnant += 1;
            if stagnant >= cfg.de.stagnation {
                break;
            }
        }
    }
    let (best_idx, _) = if best_idx < np { best_of(&cost) } else { (best_idx, best) };
    let mut cuts = s.cuts(&pop[best_idx]);
    if cfg.de.polish && s.feasible(&cuts) {
        s.polish(&mut cuts);
    }
    if !s.feasible(&cuts) {
        return Err(Error::Infeasible(format!(
            "best individual after {generations} generations still violates constraints (penalized objective {})",
            s.cost_of_cuts(&cuts)
        )));
    }
    let polished_objective = s.cost_of_cuts(&cuts);
    let boundaries: Vec<f64> = cuts.iter().map(|&c| s.midpoint(c)).collect();
    let mut class_counts = vec![0usize; k];
    let mut pd_sum = vec![0.0; k];
    let mut defaults = vec![0usize; k];
    for (&p, &t) in pds.iter().zip(targets) {
        let c = assign_class(&boundaries, p);
        class_counts[c] += 1;
        pd_sum[c] += p;
        defaults[c] += usize::from(t);
    }
    let class_pd = (0..k).map(|c| pd_sum[c] / class_counts[c] as f64).collect();
    let class_default_rate = (0..k)
        .map(|c| defaults[c] as f64 / class_counts[c] as f64)
        .collect();
    Ok((
        RatingScale {
            labels,
            boundaries,
            class_pd,
            class_counts,
            class_default_rate,
            objective: s.direct_objective(&cuts),
            min_share: cfg.min_share,
        },
        DeTrace {
            generations,
            best_history: history,
            polished_objective,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinomialResult {
    pub p_value: f64,
    pub pass: bool,
}

/// One-sided `P(X >= defaults)` for `X ~ Binomial(n, pd)`; passes when the
/// p-value is at least `alpha`.
pub fn binomial_test(defaults: u64, n: u64, pd: f64, alpha: f64) -> Result<BinomialResult> {
    if !(pd > 0.0 && pd < 1.0) {
        return Err(invalid(format!("pd {pd} outside (0,1)")));
    }
    if defaults > n {
        return Err(invalid("defaults exceed sample size"));
    }
    let p_value = upper_tail(defaults, n, pd);
    Ok(BinomialResult { p_value, pass: p_value >= alpha })
}

/// `P(X >= d)`, summed from the far tail inwards. Terms use exact powers
/// while they stay representable and log space otherwise.
pub fn upper_tail(d: u64, n: u64, p: f64) -> f64 {
    if d == 0 {
        return 1.0;
    }
    let q = 1.0 - p;
    let (lp, lq) = (p.ln(), q.ln());
    let mut total = 0.0;
    for x in (d..=n).rev() {
        let c = binomial(n, x);
        let (px, qx) = (p.powi(x as i32), q.powi((n - x) as i32));
        let term = if n <= i32::MAX as u64 && c < 9.0e15 && px.is_normal() && qx.is_normal() {
            c * px * qx
        } else {
            (ln_binomial(n, x) + x as f64 * lp + (n - x) as f64 * lq).exp()
        };
        total += term;
    }
    total.min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrafficLight {
    Green,
    Yellow,
    Orange,
    Red,
}

impl fmt::Display for TrafficLight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TrafficLight::Green => "Green",
            TrafficLight::Yellow => "Yellow",
            TrafficLight::Orange => "Orange",
            TrafficLight::Red => "Red",
        };
        f.write_str(s)
    }
}

pub const K_YELLOW: f64 = 0.84;
pub const K_ORANGE: f64 = 1.44;

/// Colour of an observed default rate against the class PD, with
/// `σ = sqrt(PD (1 - PD) / N)`.
pub fn traffic_light(p_k: f64, pd_k: f64, n_k: u64, k_y: f64, k_0: f64) -> TrafficLight {
    let sigma = (pd_k * (1.0 - pd_k) / n_k.max(1) as f64).sqrt();
    if p_k < pd_k {
        TrafficLight::Green
    } else if p_k < pd_k + k_y * sigma {
        TrafficLight::Yellow
    } else if p_k < pd_k + k_0 * sigma {
        TrafficLight::Orange
    } else {
        TrafficLight::Red
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidationConfig {
    pub alpha: f64,
    /// Classes with fewer observations skip the binomial test.
    pub reporting_floor: usize,
    pub k_y: f64,
    pub k_0: f64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig {
            alpha: 0.05,
            reporting_floor: 30,
            k_y: K_YELLOW,
            k_0: K_ORANGE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassValidation {
    pub label: String,
    pub class_pd: f64,
    pub count: usize,
    pub defaults: usize,
    pub observed_rate: Option<f64>,
    /// `None` when the class is below the reporting floor.
    pub binomial_p: Option<f64>,
    pub binomial_pass: Option<bool>,
    pub traffic_light: Option<TrafficLight>,
}

impl ClassValidation {
    pub fn failed(&self) -> bool {
        self.binomial_pass == Some(false)
    }
}

pub fn validate_scale(
    scale: &RatingScale,
    pds: &[f64],
    targets: &[u8],
    cfg: &ValidationConfig,
) -> Result<Vec<ClassValidation>> {
    if pds.len() != targets.len() {
        return Err(invalid("pds and targets differ in length"));
    }
    if pds.is_empty() {
        return Err(invalid("empty validation sample"));
    }
    let k = scale.k();
    let mut count = vec![0usize; k];
    let mut defaults = vec![0usize; k];
    for (&p, &t) in pds.iter().zip(targets) {
        let c = scale.assign(p);
        count[c] += 1;
        defaults[c] += usize::from(t);
    }
    (0..k)
        .map(|c| {
            let pd = scale.class_pd[c].clamp(1e-12, 1.0 - 1e-12);
            let observed = (count[c] > 0).then(|| defaults[c] as f64 / count[c] as f64);
            let test = if count[c] >= cfg.reporting_floor.max(1) {
                Some(binomial_test(defaults[c] as u64, count[c] as u64, pd, cfg.alpha)?)
            } else {
                None
            };
            Ok(ClassValidation {
                label: scale.labels[c].clone(),
                class_pd: scale.class_pd[c],
                count: count[c],
                defaults: defaults[c],
                observed_rate: observed,
                binomial_p: test.map(|t| t.p_value),
                binomial_pass: test.map(|t| t.pass),
                traffic_light: observed.map(|o| traffic_light(o, pd, count[c] as u64, cfg.k_y, cfg.k_0)),
            })
        })
        .collect()
}

pub fn write_validation_csv(path: &Path, rows: &[ClassValidation]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "class",
        "pd",
        "observed_rate",
        "count",
        "defaults",
        "binomial_p",
        "binomial_test",
        "traffic_light",
    ])?;
    for r in rows {
        w.write_record([
            r.label.clone(),
            r.class_pd.to_string(),
            r.observed_rate.map(|v| v.to_string()).unwrap_or_default(),
            r.count.to_string(),
            r.defaults.to_string(),
            r.binomial_p.map(|v| v.to_string()).unwrap_or_else(|| "-".into()),
            match r.binomial_pass {
                Some(true) => "pass".into(),
                Some(false) => "fail".into(),
                None => "-".into(),
            },
            r.traffic_light.map(|t| t.to_string()).unwrap_or_else(|| "-".into()),
        ])?;
    }
    w.flush()?;
    Ok(())
}
