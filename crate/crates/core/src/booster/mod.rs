//! Gradient-boosted decision trees for binary default classification.
//!
//! Logistic loss, histogram split search and leaf-wise growth capped by
//! `max_leaves`. Leaf values are `-G / (H + λ)` scaled by the learning rate.

mod hist;
mod model;
mod tune;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::features::FeatureMatrix;
use crate::metrics::{evaluate_scores, MetricReport};
use crate::rng::substream;

use hist::{best_split, build_histogram, subtract, BinnedData, SplitInfo, SplitRule};
pub use model::{logit, sigmoid, Tree, TreeEnsembleModel, TreeNode, TrainingMeta};
pub use tune::{cv_score, time_series_folds, tune, tune_with, SearchSpace, Trial, TuneResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParams {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub max_leaves: usize,
    /// Depth cap; 0 means unlimited.
    pub max_depth: usize,
    pub min_child_weight: f64,
    pub lambda: f64,
    pub class_weight: f64,
    pub max_bins: usize,
    pub min_split_gain: f64,
    /// Fraction of rows drawn per tree.
    pub subsample: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            n_rounds: 100,
            learning_rate: 0.1,
            max_leaves: 31,
            max_depth: 0,
            min_child_weight: 1.0,
            lambda: 1.0,
            class_weight: 1.0,
            max_bins: 64,
            min_split_gain: 0.0,
            subsample: 1.0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate <= 1.0
            && self.max_leaves >= 2
            && self.min_child_weight >= 0.0
            && self.lambda >= 0.0
            && self.class_weight > 0.0
            && (2..=255).contains(&self.max_bins)
            && self.min_split_gain >= 0.0
            && self.subsample > 0.0
            && self.subsample <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("hyperparameters out of range: {self:?}")))
        }
    }
}

struct Leaf {
    node: usize,
    depth: usize,
    rows: Vec<u32>,
    hist: Vec<[f64; 2]>,
    g: f64,
    h: f64,
    split: Option<SplitInfo>,
}

fn totals(hist: &[[f64; 2]], data: &BinnedData) -> (f64, f64) {
    // every row lands in exactly one bin of feature 0
    hist[..data.stride]
        .iter()
        .fold((0.0, 0.0), |(g, h), b| (g + b[0], h + b[1]))
}

struct Grower<'a> {
    data: &'a BinnedData,
    grad: &'a [f64],
    hess: &'a [f64],
    params: &'a HyperParams,
    rule: SplitRule,
}

impl Grower<'_> {
    fn make_leaf(&self, node: usize, depth: usize, rows: Vec<u32>, hist: Vec<[f64; 2]>) -> Leaf {
        let (g, h) = totals(&hist, self.data);
        let depth_ok = self.params.max_depth == 0 || depth < self.params.max_depth;
        let split = if depth_ok && rows.len() >= 2 {
            best_split(self.data, &hist, g, h, self.rule)
        } else {
            None
        };
        Leaf { node, depth, rows, hist, g, h, split }
    }

    /// Grows one tree; returns it with the training rows of each leaf node.
    fn grow(&self, rows: Vec<u32>) -> (Tree, Vec<(usize, Vec<u32>)>) {
        let lr = self.params.learning_rate;
        let lambda = self.params.lambda;
        let root_hist = build_histogram(self.data, &rows, self.grad, self.hess);
        let root = self.make_leaf(0, 0, rows, root_hist);
        let mut nodes = vec![TreeNode::leaf(0.0, root.h)];
        let mut open = vec![root];
        let mut done: Vec<Leaf> = Vec::new();

        while open.len() + done.len() < self.params.max_leaves {
            let pick = open
                .iter()
                .enumerate()
                .filter_map(|(i, l)| l.split.map(|s| (i, s.gain)))
                .fold(None, |best: Option<(usize, f64)>, (i, g)| match best {
                    Some((_, bg)) if bg >= g => best,
                    _ => Some((i, g)),
                });
            let Some((idx, _)) = pick else { break };
            let leaf = open.swap_remove(idx);
            let s = leaf.split.expect("picked leaf has a split");
            let col = self.data.column(s.feature);
            let miss = self.data.missing_bin(s.feature);
            let (left_rows, right_rows): (Vec<u32>, Vec<u32>) = leaf.rows.iter().partition(|&&r| {
                let b = col[r as usize] as usize;
                if b == miss {
                    s.missing_left
                } else {
                    b <= s.bin
                }
            });
            let (small, large_is_left) = if left_rows.len() <= right_rows.len() {
                (&left_rows, false)
            } else {
                (&right_rows, true)
            };
            let small_hist = build_histogram(self.data, small, self.grad, self.hess);
            let large_hist = subtract(&leaf.hist, &small_hist);
            let (lh, rh) = if large_is_left {
                (large_hist, small_hist)
            } else {
                (small_hist, large_hist)
            };
            let li = nodes.len();
            let ri = li + 1;
            nodes[leaf.node] = TreeNode {
                feature_index: s.feature,
                threshold: self.data.thresholds[s.feature][s.bin],
                missing_goes_left: s.missing_left,
                children: Some((li, ri)),
                leaf_value: 0.0,
                cover: leaf.h,
            };
            nodes.push(TreeNode::leaf(0.0, s.left_hess));
            nodes.push(TreeNode::leaf(0.0, leaf.h - s.left_hess));
            let d = leaf.depth + 1;
            for l in [
                self.make_leaf(li, d, left_rows, lh),
                self.make_leaf(ri, d, right_rows, rh),
            ] {
                if l.split.is_some() {
                    open.push(l);
                } else {
                    done.push(l);
                }
            }
        }

        let mut leaf_rows = Vec::with_capacity(open.len() + done.len());
        for l in open.into_iter().chain(done) {
            let n = &mut nodes[l.node];
            n.leaf_value = lr * (-l.g / (l.h + lambda));
            n.cover = l.h;
            leaf_rows.push((l.node, l.rows));
        }
        (Tree { nodes }, leaf_rows)
    }
}

fn check_training_data(train: &FeatureMatrix) -> Result<(usize, usize)> {
    if train.n_cols() == 0 || train.n_rows == 0 {
        return Err(Error::EmptyFeatureMatrix);
    }
    if let Some(j) = (0..train.n_cols()).find(|&j| (0..train.n_rows).any(|i| train.get(i, j).is_infinite())) {
        return Err(invalid(format!(
            "non-finite value in feature {}",
            train.column_names[j]
        )));
    }
    let pos = train.positives();
    let neg = train.n_rows - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Degenerate("training target has a single class".into()));
    }
    Ok((pos, neg))
}

/// Fits a boosted ensemble with logistic loss.
pub fn fit(train: &FeatureMatrix, params: &HyperParams, seed: u64) -> Result<TreeEnsembleModel> {
    params.validate()?;
    let (pos, neg) = check_training_data(train)?;
    let w = params.class_weight;
    let base_score = (w * pos as f64 / neg as f64).ln();
    let data = BinnedData::new(train, params.max_bins);
    let n = train.n_rows;
    let weights: Vec<f64> = train
        .target
        .iter()
        .map(|&t| if t == 1 { w } else { 1.0 })
        .collect();
    let y: Vec<f64> = train.target.iter().map(|&t| f64::from(t)).collect();
    let mut margin = vec![base_score; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let rule = SplitRule {
        lambda: params.lambda,
        min_child_weight: params.min_child_weight,
        min_split_gain: params.min_split_gain,
    };
    let mut trees = Vec::with_capacity(params.n_rounds);
    for round in 0..params.n_rounds {
        for i in 0..n {
            let p = sigmoid(margin[i]);
            grad[i] = weights[i] * (p - y[i]);
            hess[i] = (weights[i] * p * (1.0 - p)).max(1e-16);
        }
        let rows: Vec<u32> = if params.subsample < 1.0 {
            let mut rng = substream(seed, round as u64);
            (0..n as u32)
                .filter(|_| rng.random::<f64>() < params.subsample)
                .collect()
        } else {
            (0..n as u32).collect()
        };
        if rows.is_empty() {
            continue;
        }
        let grower = Grower {
            data: &data,
            grad: &grad,
            hess: &hess,
            params,
            rule,
        };
        let (tree, leaf_rows) = grower.grow(rows);
        if params.subsample < 1.0 {
            for (i, m) in margin.iter_mut().enumerate() {
                *m += tree.predict(train.row(i));
            }
        } else {
            for (node, rows) in &leaf_rows {
                let v = tree.nodes[*node].leaf_value;
                for &r in rows {
                    margin[r as usize] += v;
                }
            }
        }
        trees.push(tree);
    }
    Ok(TreeEnsembleModel {
        base_score,
        learning_rate: params.learning_rate,
        feature_names: train.column_names.clone(),
        class_weight: w,
        trees,
        training_meta: TrainingMeta {
            seed,
            rounds: params.n_rounds,
            n_rows: n,
            n_positive: pos,
            params: params.clone(),
        },
    })
}

pub fn predict_proba(model: &TreeEnsembleModel, rows: &FeatureMatrix) -> Result<Vec<f64>> {
    model.predict_proba(rows)
}

/// Metrics of the model's probabilities against `rows.target`.
pub fn evaluate(
    model: &TreeEnsembleModel,
    rows: &FeatureMatrix,
    threshold: f64,
    beta: f64,
) -> Result<MetricReport> {
    let p = model.predict_proba(rows)?;
    evaluate_scores(&p, &rows.target, threshold, beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::auc;
    use proptest::prelude::*;
    use rand::Rng;

    fn toy(n: usize, seed: u64) -> FeatureMatrix {
        let mut rng = substream(seed, 0);
        let mut values = Vec::new();
        let mut target = Vec::new();
        for _ in 0..n {
            let z: f64 = rng.random::<f64>() * 4.0 - 2.0;
            let noise: f64 = rng.random();
            let y = u8::from(rng.random::<f64>() < sigmoid(2.0 * z - 1.0));
            values.extend([z, noise, if rng.random::<f64>() < 0.1 { f64::NAN } else { z * z }]);
            target.push(y);
        }
        FeatureMatrix::ungrouped(vec!["z".into(), "noise".into(), "zz".into()], values, target).unwrap()
    }

    #[test]
    fn zero_rounds_predict_weighted_base_rate() {
        let m = toy(300, 1);
        let params = HyperParams {
            n_rounds: 0,
            class_weight: 3.0,
            ..Default::default()
        };
        let model = fit(&m, &params, 7).unwrap();
        let pos = m.positives() as f64;
        let neg = m.n_rows as f64 - pos;
        let expected = 3.0 * pos / (3.0 * pos + neg);
        for p in model.predict_proba(&m).unwrap() {
            assert!((p - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn stump_separates_perfectly() {
        let x: Vec<f64> = (0..40).map(f64::from).collect();
        let target: Vec<u8> = (0..40).map(|i| u8::from(i >= 25)).collect();
        let m = FeatureMatrix::ungrouped(vec!["x".into()], x, target).unwrap();
        let params = HyperParams {
            n_rounds: 1,
            max_leaves: 2,
            learning_rate: 1.0,
            ..Default::default()
        };
        let model = fit(&m, &params, 0).unwrap();
        assert_eq!(model.trees[0].depth(), 1);
        assert_eq!(model.trees[0].nodes[0].threshold, 24.5);
        let p = model.predict_proba(&m).unwrap();
        assert_eq!(auc(&p, &m.target).unwrap(), 1.0);
    }

    #[test]
    fn learns_signal_and_is_deterministic() {
        let train = toy(3000, 2);
        let test = toy(2000, 3);
        let params = HyperParams {
            subsample: 0.8,
            ..Default::default()
        };
        let a = fit(&train, &params, 11).unwrap();
        let b = fit(&train, &params, 11).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        let p = a.predict_proba(&test).unwrap();
        assert!(auc(&p, &test.target).unwrap() > 0.8);
        for t in &a.trees {
            assert!(t.n_leaves() <= params.max_leaves);
            assert!(t.nodes.iter().all(|n| n.cover > 0.0));
            assert!(t.nodes.iter().all(|n| n.is_leaf() || n.children.unwrap().0 > 0));
        }
    }

    #[test]
    fn json_round_trip_preserves_predictions() {
        let train = toy(500, 4);
        let model = fit(&train, &HyperParams::default(), 1).unwrap();
        let back = TreeEnsembleModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn rejects_misaligned_columns_and_bad_targets() {
        let train = toy(200, 5);
        let model = fit(&train, &HyperParams { n_rounds: 3, ..Default::default() }, 1).unwrap();
        let swapped = train.select_columns(&[1, 0, 2]);
        assert!(matches!(model.predict_proba(&swapped), Err(Error::FeatureMismatch(_))));
        let one_class = FeatureMatrix::ungrouped(vec!["x".into()], vec![1.0, 2.0], vec![0, 0]).unwrap();
        assert!(matches!(fit(&one_class, &HyperParams::default(), 0), Err(Error::Degenerate(_))));
        let inf = FeatureMatrix::ungrouped(vec!["x".into()], vec![1.0, f64::INFINITY], vec![0, 1]).unwrap();
        assert!(fit(&inf, &HyperParams::default(), 0).is_err());
    }

    #[test]
    fn all_missing_row_is_finite() {
        let train = toy(500, 6);
        let model = fit(&train, &HyperParams::default(), 1).unwrap();
        let p = model.predict_margin_row(&[f64::NAN; 3]);
        let prob = sigmoid(p);
        assert!(prob > 0.0 && prob < 1.0);
    }

    #[test]
    fn class_weight_raises_recall() {
        let train = toy(2000, 8);
        let mut last = -1.0;
        for w in [0.25, 0.5, 1.0, 2.0, 4.0, 8.0] {
            let params = HyperParams { n_rounds: 30, class_weight: w, ..Default::default() };
            let model = fit(&train, &params, 0).unwrap();
            let r = evaluate(&model, &train, 0.5, 1.0).unwrap().recall;
            assert!(r >= last - 0.01, "recall {r} after {last} at weight {w}");
            last = r;
        }
    }

    /// Best gain over every split between consecutive distinct values,
    /// computed straight from the rows.
    fn exhaustive_best(x: &[Vec<f64>], g: &[f64], h: &[f64], rule: SplitRule) -> Option<(usize, f64, f64)> {
        let score = |g: f64, h: f64| g * g / (h + rule.lambda);
        let gt: f64 = g.iter().sum();
        let ht: f64 = h.iter().sum();
        let mut best: Option<(usize, f64, f64)> = None;
        for (j, col) in x.iter().enumerate() {
            let mut vals: Vec<f64> = col.clone();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            for w in vals.windows(2) {
                let t = w[0] + (w[1] - w[0]) / 2.0;
                let (mut gl, mut hl) = (0.0, 0.0);
                for i in 0..col.len() {
                    if col[i] <= t {
                        gl += g[i];
                        hl += h[i];
                    }
                }
                if hl < rule.min_child_weight || ht - hl < rule.min_child_weight {
                    continue;
                }
                let gain = score(gl, hl) + score(gt - gl, ht - hl) - score(gt, ht);
                if gain > rule.min_split_gain && best.is_none_or(|b| gain > b.2 + 1e-9) {
                    best = Some((j, t, gain));
                }
            }
        }
        best
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn histogram_split_equals_exhaustive(
            rows in prop::collection::vec((0u8..30, 0u8..8, -1.0f64..1.0, 0.05f64..1.0), 4..120)
        ) {
            let x = vec![
                rows.iter().map(|r| f64::from(r.0) * 0.5).collect::<Vec<_>>(),
                rows.iter().map(|r| f64::from(r.1)).collect::<Vec<_>>(),
            ];
            let g: Vec<f64> = rows.iter().map(|r| r.2).collect();
            let h: Vec<f64> = rows.iter().map(|r| r.3).collect();
            let mut values = Vec::new();
            for (a, b) in x[0].iter().zip(&x[1]) {
                values.extend([*a, *b]);
            }
            let m = FeatureMatrix::ungrouped(vec!["a".into(), "b".into()], values, vec![0; rows.len()]).unwrap();
            let data = BinnedData::new(&m, 64);
            let idx: Vec<u32> = (0..rows.len() as u32).collect();
            let hist = build_histogram(&data, &idx, &g, &h);
            let rule = SplitRule { lambda: 1.0, min_child_weight: 0.1, min_split_gain: 1e-9 };
            let got = best_split(&data, &hist, g.iter().sum(), h.iter().sum(), rule);
            let want = exhaustive_best(&x, &g, &h, rule);
            match (got, want) {
                (None, None) => {}
                (Some(s), Some((_, _, wg))) => {
                    prop_assert!((s.gain - wg).abs() < 1e-9 * (1.0 + wg.abs()));
                }
                (a, b) => prop_assert!(false, "histogram {:?} vs exhaustive {:?}", a, b),
            }
        }

        #[test]
        fn probabilities_strictly_inside_unit_interval(seed in 0u64..20) {
            let train = toy(200, seed);
            let params = HyperParams { n_rounds: 20, learning_rate: 1.0, lambda: 0.0, min_child_weight: 0.0, ..Default::default() };
            let model = fit(&train, &params, seed).unwrap();
            for p in model.predict_proba(&train).unwrap() {
                prop_assert!(p > 0.0 && p < 1.0);
            }
        }
    }
}
