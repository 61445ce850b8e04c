//! Beta calibration of raw scores, Brier score and reliability tables.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const SCORE_CLIP: f64 = 1e-6;
const GRAD_TOL: f64 = 1e-10;
const MAX_ITER: usize = 100;

pub fn clip(p: f64) -> f64 {
    p.clamp(SCORE_CLIP, 1.0 - SCORE_CLIP)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    pub n: usize,
    /// Mean negative log-likelihood at the solution.
    pub log_loss: f64,
    pub iterations: usize,
}

/// `μ(p) = 1 / (1 + 1 / (e^c · p^a / (1 - p)^b))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMap {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub fit_meta: Option<FitMeta>,
}

impl CalibrationMap {
    pub fn new(a: f64, b: f64, c: f64) -> Self {
        CalibrationMap { a, b, c, fit_meta: None }
    }

    pub fn identity() -> Self {
        Self::new(1.0, 1.0, 0.0)
    }

    /// Calibrated probability of a raw score; scores are clipped first and
    /// results kept strictly inside (0, 1).
    pub fn apply(&self, p: f64) -> f64 {
        let p = clip(p);
        let num = self.c.exp() * p.powf(self.a);
        let den = (1.0 - p).powf(self.b);
        let mu = if num.is_normal() && den.is_normal() && (num + den).is_finite() {
            num / (num + den)
        } else {
            let t = self.c + self.a * p.ln() - self.b * (1.0 - p).ln();
            1.0 / (1.0 + (-t).exp())
        };
        mu.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
    }

    pub fn apply_all(&self, scores: &[f64]) -> Vec<f64> {
        scores.iter().map(|&p| self.apply(p)).collect()
    }
}

fn check_pairs(forecasts: &[f64], outcomes: &[u8]) -> Result<()> {
    if forecasts.len() != outcomes.len() {
        return Err(invalid("forecasts and outcomes differ in length"));
    }
    if forecasts.is_empty() {
        return Err(invalid("empty forecast set"));
    }
    Ok(())
}

struct Solution {
    beta: DVector<f64>,
    log_loss: f64,
    iterations: usize,
}

fn mean_nll(x: &DMatrix<f64>, y: &[f64], beta: &DVector<f64>) -> f64 {
    let eta = x * beta;
    let s: f64 = eta
        .iter()
        .zip(y)
        .map(|(&e, &yi)| {
            // log(1 + e^e) - y e, stable for both signs
            let softplus = if e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
            softplus - yi * e
        })
        .sum();
    s / y.len() as f64
}

/// Damped Newton for logistic regression with design `x` (intercept in
/// column 0).
fn newton(x: &DMatrix<f64>, y: &[f64]) -> Result<Solution> {
    let (n, k) = (x.nrows(), x.ncols());
    let nf = n as f64;
    let mut beta = DVector::<f64>::zeros(k);
    let mut loss = mean_nll(x, y, &beta);
    for it in 0..MAX_ITER {
        let eta = x * &beta;
        let mut grad = DVector::<f64>::zeros(k);
        let mut hess = DMatrix::<f64>::zeros(k, k);
        for i in 0..n {
            let mu = 1.0 / (1.0 + (-eta[i]).exp());
            let w = mu * (1.0 - mu);
            let r = mu - y[i];
            for a in 0..k {
                let xa = x[(i, a)];
                grad[a] += r * xa;
                for b in a..k {
                    hess[(a, b)] += w * xa * x[(i, b)];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                hess[(a, b)] = hess[(b, a)];
            }
        }
        grad /= nf;
        hess /= nf;
        if grad.amax() < GRAD_TOL {
            return Ok(Solution { beta, log_loss: loss, iterations: it });
        }
        let step = match hess.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => {
                let mut h = hess.clone();
                for a in 0..k {
                    h[(a, a)] += 1e-8;
                }
                h.cholesky()
                    .ok_or_else(|| Error::NonConvergence("singular Hessian".into()))?
                    .solve(&grad)
            }
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = &beta - &step * t;
            let l = mean_nll(x, y, &cand);
            if l <= loss {
                beta = cand;
                loss = l;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted || step.amax() * t < 1e-15 {
            // no representable descent left
            if grad.amax() < 1e-6 {
                return Ok(Solution { beta, log_loss: loss, iterations: it + 1 });
            }
            return Err(Error::NonConvergence(format!(
                "line search stalled at iteration {it} with gradient norm {:e}",
                grad.amax()
            )));
        }
    }
    Err(Error::NonConvergence(format!(
        "no convergence after {MAX_ITER} Newton iterations (log-loss {loss})"
    )))
}

/// Maximum-likelihood beta calibration. A negative `a` or `b` is pinned
/// to zero and the remaining coefficients refitted.
pub fn fit_beta(scores: &[f64], targets: &[u8]) -> Result<CalibrationMap> {
    check_pairs(scores, targets)?;
    let pos = targets.iter().filter(|&&t| t == 1).count();
    if pos == 0 || pos == targets.len() {
        return Err(Error::Degenerate("calibration targets contain a single class".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(invalid("non-finite score"));
    }
    let y: Vec<f64> = targets.iter().map(|&t| f64::from(t)).collect();
    let x1: Vec<f64> = scores.iter().map(|&p| clip(p).ln()).collect();
    let x2: Vec<f64> = scores.iter().map(|&p| -(1.0 - clip(p)).ln()).collect();
    // active covariates: 0 -> a (ln p), 1 -> b (-ln(1-p))
    let mut active = vec![0usize, 1];
    loop {
        let n = y.len();
        let x = DMatrix::from_fn(n, active.len() + 1, |i, j| match j {
            0 => 1.0,
            _ if active[j - 1] == 0 => x1[i],
            _ => x2[i],
        });
        let sol = newton(&x, &y)?;
        let coef: Vec<f64> = (0..active.len()).map(|j| sol.beta[j + 1]).collect();
        let most_negative = coef
            .iter()
            .enumerate()
            .filter(|(_, &v)| v < 0.0)
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(j, _)| j);
        if let Some(j) = most_negative {
            log::debug!("calibration: pinning coefficient {} to zero", ["a", "b"][active[j]]);
            active.remove(j);
            continue;
        }
        let mut ab = [0.0, 0.0];
        for (j, &cov) in active.iter().enumerate() {
            ab[cov] = coef[j];
        }
        return Ok(CalibrationMap {
            a: ab[0],
            b: ab[1],
            c: sol.beta[0],
            fit_meta: Some(FitMeta {
                n,
                log_loss: sol.log_loss,
                iterations: sol.iterations,
            }),
        });
    }
}

pub fn brier(forecasts: &[f64], outcomes: &[u8]) -> Result<f64> {
    check_pairs(forecasts, outcomes)?;
    let s: f64 = forecasts
        .iter()
        .zip(outcomes)
        .map(|(&f, &o)| (f - f64::from(o)).powi(2))
        .sum();
    Ok(s / forecasts.len() as f64)
}

/// `1 - BS / BS_ref` against the constant base-rate forecast.
pub fn brier_skill(forecasts: &[f64], outcomes: &[u8]) -> Result<f64> {
    let bs = brier(forecasts, outcomes)?;
    let rate = outcomes.iter().map(|&o| f64::from(o)).sum::<f64>() / outcomes.len() as f64;
    let reference = rate * (1.0 - rate);
    if reference == 0.0 {
        return Err(Error::Degenerate("outcomes have zero variance".into()));
    }
    Ok(1.0 - bs / reference)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    pub mean_forecast: Option<f64>,
    pub observed_rate: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityTable {
    pub bins: Vec<ReliabilityBin>,
}

/// Equal-width bins over [0, 1]; the last bin is closed on the right.
pub fn reliability(forecasts: &[f64], outcomes: &[u8], n_bins: usize) -> Result<ReliabilityTable> {
    if n_bins < 2 {
        return Err(invalid("at least two reliability bins required"));
    }
    if forecasts.len() != outcomes.len() {
        return Err(invalid("forecasts and outcomes differ in length"));
    }
    let mut sum_f = vec![0.0; n_bins];
    let mut sum_o = vec![0.0; n_bins];
    let mut count = vec![0usize; n_bins];
    for (&f, &o) in forecasts.iter().zip(outcomes) {
        let k = ((f * n_bins as f64).floor().max(0.0) as usize).min(n_bins - 1);
        sum_f[k] += f;
        sum_o[k] += f64::from(o);
        count[k] += 1;
    }
    let bins = (0..n_bins)
        .map(|k| {
            let c = count[k];
            ReliabilityBin {
                lower: k as f64 / n_bins as f64,
                upper: (k + 1) as f64 / n_bins as f64,
                mean_forecast: (c > 0).then(|| sum_f[k] / c as f64),
                observed_rate: (c > 0).then(|| sum_o[k] / c as f64),
                count: c,
            }
        })
        .collect();
    Ok(ReliabilityTable { bins })
}

pub fn write_reliability_csv(path: &Path, t: &ReliabilityTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["lower", "upper", "mean_forecast", "observed_rate", "count"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for b in &t.bins {
        w.write_record([
            b.lower.to_string(),
            b.upper.to_string(),
            opt(b.mean_forecast),
            opt(b.observed_rate),
            b.count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
