use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::features::FeatureMatrix;
use crate::metrics::DEFAULT_BETA;
use crate::rng::substream;

use super::{evaluate, fit, HyperParams};

/// Ranges sampled by the randomized search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub learning_rate: (f64, f64),
    pub max_leaves: (usize, usize),
    pub min_child_weight: (f64, f64),
    pub lambda: (f64, f64),
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            learning_rate: (0.01, 0.3),
            max_leaves: (7, 127),
            min_child_weight: (1.0, 100.0),
            lambda: (0.1, 10.0),
        }
    }
}

fn log_uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
}

impl SearchSpace {
    /// Draws one configuration; `class_weight` is 1 or the inverse
    /// prevalence with equal probability.
    pub fn sample<R: Rng>(&self, rng: &mut R, base: &HyperParams, inverse_prevalence: f64) -> HyperParams {
        HyperParams {
            learning_rate: log_uniform(rng, self.learning_rate),
            max_leaves: rng.random_range(self.max_leaves.0..=self.max_leaves.1),
            min_child_weight: log_uniform(rng, self.min_child_weight),
            lambda: self.lambda.0 + rng.random::<f64>() * (self.lambda.1 - self.lambda.0),
            class_weight: if rng.random::<bool>() { 1.0 } else { inverse_prevalence },
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub params: HyperParams,
    /// Mean F-beta over usable folds; `None` when every fold was degenerate.
    pub score: Option<f64>,
    pub fold_scores: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best: HyperParams,
    pub best_score: f64,
    pub trials: Vec<Trial>,
}

/// Expanding-window folds: train on vintages `<= y_k`, validate on `y_{k+1}`.
pub fn time_series_folds(vintages: &[i32]) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    let mut years: Vec<i32> = vintages.to_vec();
    years.sort_unstable();
    years.dedup();
    if years.len() < 2 {
        return Err(Error::OutOfTimeSplitImpossible(
            "time-series cross-validation needs at least two vintages".into(),
        ));
    }
    Ok(years
        .windows(2)
        .map(|w| {
            let train = (0..vintages.len()).filter(|&i| vintages[i] <= w[0]).collect();
            let val = (0..vintages.len()).filter(|&i| vintages[i] == w[1]).collect();
            (train, val)
        })
        .collect())
}

/// Cross-validated F-beta of one configuration.
pub fn cv_score(
    train: &FeatureMatrix,
    folds: &[(Vec<usize>, Vec<usize>)],
    params: &HyperParams,
    seed: u64,
    beta: f64,
) -> Vec<Option<f64>> {
    folds
        .par_iter()
        .map(|(tr, va)| {
            let tr = train.select_rows(tr);
            let va = train.select_rows(va);
            let model = fit(&tr, params, seed).ok()?;
            evaluate(&model, &va, 0.5, beta).ok().map(|r| r.f_beta)
        })
        .collect()
}

fn mean_score(fold_scores: &[Option<f64>]) -> Option<f64> {
    let ok: Vec<f64> = fold_scores.iter().flatten().copied().collect();
    if ok.is_empty() {
        None
    } else {
        Some(ok.iter().sum::<f64>() / ok.len() as f64)
    }
}

/// Randomized search with default ranges and β.
pub fn tune(train: &FeatureMatrix, budget: usize, seed: u64) -> Result<TuneResult> {
    tune_with(train, &HyperParams::default(), &SearchSpace::default(), budget, seed, DEFAULT_BETA)
}

pub fn tune_with(
    train: &FeatureMatrix,
    base: &HyperParams,
    space: &SearchSpace,
    budget: usize,
    seed: u64,
    beta: f64,
) -> Result<TuneResult> {
    if budget == 0 {
        return Err(invalid("tuning budget must be at least 1"));
    }
    if train.vintages.len() != train.n_rows {
        return Err(invalid("tuning requires a vintage per row"));
    }
    let folds = time_series_folds(&train.vintages)?;
    let pos = train.positives();
    if pos == 0 || pos == train.n_rows {
        return Err(Error::Degenerate("training target has a single class".into()));
    }
    let inverse_prevalence = (train.n_rows - pos) as f64 / pos as f64;
    let mut rng = substream(seed, u64::MAX);
    let candidates: Vec<HyperParams> = (0..budget)
        .map(|_| space.sample(&mut rng, base, inverse_prevalence))
        .collect();
    let mut trials = Vec::with_capacity(budget);
    for (k, params) in candidates.into_iter().enumerate() {
        let fold_scores = cv_score(train, &folds, &params, seed, beta);
        let score = mean_score(&fold_scores);
        log::debug!("trial {k}: score {score:?}");
        trials.push(Trial { params, score, fold_scores });
    }
    let best = trials
        .iter()
        .filter_map(|t| t.score.map(|s| (t, s)))
        .fold(None, |acc: Option<(&Trial, f64)>, (t, s)| match acc {
            Some((_, bs)) if bs >= s => acc,
            _ => Some((t, s)),
        })
        .ok_or_else(|| Error::Degenerate("every tuning configuration was degenerate".into()))?;
    Ok(TuneResult {
        best: best.0.params.clone(),
        best_score: best.1,
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::booster::sigmoid;

    fn vintage_data(n: usize) -> FeatureMatrix {
        let mut rng = substream(9, 1);
        let mut values = Vec::new();
        let mut target = Vec::new();
        let mut vintages = Vec::new();
        for i in 0..n {
            let z: f64 = rng.random::<f64>() * 6.0 - 3.0;
            values.extend([z, rng.random::<f64>()]);
            target.push(u8::from(rng.random::<f64>() < sigmoid(2.0 * z - 3.0)));
            vintages.push(2018 + (i % 4) as i32);
        }
        FeatureMatrix::ungrouped(vec!["z".into(), "u".into()], values, target)
            .unwrap()
            .with_vintages(vintages)
            .unwrap()
    }

    #[test]
    fn folds_expand() {
        let f = time_series_folds(&[2019, 2018, 2020, 2018]).unwrap();
        assert_eq!(f.len(), 2);
        assert_eq!(f[0], (vec![1, 3], vec![0]));
        assert_eq!(f[1], (vec![0, 1, 3], vec![2]));
        assert!(time_series_folds(&[2018, 2018]).is_err());
    }

    #[test]
    fn budget_one_returns_the_sample() {
        let m = vintage_data(800);
        let base = HyperParams { n_rounds: 10, ..Default::default() };
        let r = tune_with(&m, &base, &SearchSpace::default(), 1, 3, DEFAULT_BETA).unwrap();
        assert_eq!(r.trials.len(), 1);
        assert_eq!(r.best, r.trials[0].params);
        let again = tune_with(&m, &base, &SearchSpace::default(), 1, 3, DEFAULT_BETA).unwrap();
        assert_eq!(r, again);
        let space = SearchSpace::default();
        assert!((0.01..=0.3).contains(&r.best.learning_rate));
        assert!((space.max_leaves.0..=space.max_leaves.1).contains(&r.best.max_leaves));
    }
}
