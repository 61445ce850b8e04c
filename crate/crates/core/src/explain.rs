//! Path-dependent TreeSHAP attributions on the margin (log-odds) scale.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::booster::{Tree, TreeEnsembleModel};
use crate::error::{invalid, Error, Result};
use crate::features::FeatureMatrix;

#[derive(Debug, Clone, Copy)]
struct PathElement {
    feature: Option<usize>,
    zero_fraction: f64,
    one_fraction: f64,
    pweight: f64,
}

fn extend_path(path: &mut Vec<PathElement>, zero_fraction: f64, one_fraction: f64, feature: Option<usize>) {
    let d = path.len();
    path.push(PathElement {
        feature,
        zero_fraction,
        one_fraction,
        pweight: if d == 0 { 1.0 } else { 0.0 },
    });
    let df = (d + 1) as f64;
    for i in (0..d).rev() {
        path[i + 1].pweight += one_fraction * path[i].pweight * (i + 1) as f64 / df;
        path[i].pweight = zero_fraction * path[i].pweight * (d - i) as f64 / df;
    }
}

fn unwind_path(path: &mut Vec<PathElement>, index: usize) {
    let d = path.len() - 1;
    let PathElement { one_fraction, zero_fraction, .. } = path[index];
    let df = (d + 1) as f64;
    let mut next = path[d].pweight;
    for i in (0..d).rev() {
        if one_fraction != 0.0 {
            let tmp = path[i].pweight;
            path[i].pweight = next * df / ((i + 1) as f64 * one_fraction);
            next = tmp - path[i].pweight * zero_fraction * (d - i) as f64 / df;
        } else {
            path[i].pweight = path[i].pweight * df / (zero_fraction * (d - i) as f64);
        }
    }
    for i in index..d {
        path[i].feature = path[i + 1].feature;
        path[i].zero_fraction = path[i + 1].zero_fraction;
        path[i].one_fraction = path[i + 1].one_fraction;
    }
    path.pop();
}

fn unwound_path_sum(path: &[PathElement], index: usize) -> f64 {
    let d = path.len() - 1;
    let PathElement { one_fraction, zero_fraction, .. } = path[index];
    let df = (d + 1) as f64;
    let mut next = path[d].pweight;
    let mut total = 0.0;
    for i in (0..d).rev() {
        if one_fraction != 0.0 {
            let tmp = next * df / ((i + 1) as f64 * one_fraction);
            total += tmp;
            next = path[i].pweight - tmp * zero_fraction * (d - i) as f64 / df;
        } else if zero_fraction != 0.0 {
            total += path[i].pweight / zero_fraction / ((d - i) as f64 / df);
        }
    }
    total
}

fn child_fraction(tree: &Tree, parent: usize, child: usize) -> f64 {
    tree.nodes[child].cover / tree.nodes[parent].cover
}

#[allow(clippy::too_many_arguments)]
fn recurse(
    tree: &Tree,
    row: &[f64],
    phi: &mut [f64],
    node: usize,
    mut path: Vec<PathElement>,
    zero_fraction: f64,
    one_fraction: f64,
    feature: Option<usize>,
) {
    extend_path(&mut path, zero_fraction, one_fraction, feature);
    let n = &tree.nodes[node];
    let Some((l, r)) = n.children else {
        for i in 1..path.len() {
            let w = unwound_path_sum(&path, i);
            let el = path[i];
            if let Some(f) = el.feature {
                phi[f] += w * (el.one_fraction - el.zero_fraction) * n.leaf_value;
            }
        }
        return;
    };
    let hot = n.route(row[n.feature_index]).expect("internal node");
    let cold = if hot == l { r } else { l };
    let (mut in_zero, mut in_one) = (1.0, 1.0);
    if let Some(k) = path.iter().position(|e| e.feature == Some(n.feature_index)) {
        in_zero = path[k].zero_fraction;
        in_one = path[k].one_fraction;
        unwind_path(&mut path, k);
    }
    let f = Some(n.feature_index);
    recurse(tree, row, phi, hot, path.clone(), child_fraction(tree, node, hot) * in_zero, in_one, f);
    recurse(tree, row, phi, cold, path, child_fraction(tree, node, cold) * in_zero, 0.0, f);
}

/// Cover-weighted mean of the tree's output, the reference the
/// attributions are measured against.
pub fn expected_value(tree: &Tree) -> f64 {
    fn go(t: &Tree, i: usize) -> f64 {
        match t.nodes[i].children {
            None => t.nodes[i].leaf_value,
            Some((l, r)) => child_fraction(t, i, l) * go(t, l) + child_fraction(t, i, r) * go(t, r),
        }
    }
    go(tree, 0)
}

/// Adds the attributions of one tree for `row` into `phi`.
pub fn tree_contributions(tree: &Tree, row: &[f64], phi: &mut [f64]) {
    recurse(tree, row, phi, 0, Vec::with_capacity(16), 1.0, 1.0, None);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapExplanation {
    pub base_value: f64,
    pub contributions: Vec<f64>,
    pub margin: f64,
}

impl ShapExplanation {
    /// Contributions summed per group, groups in order of first appearance.
    pub fn grouped(&self, groups: &[String]) -> Result<Vec<(String, f64)>> {
        if groups.len() != self.contributions.len() {
            return Err(invalid("one group per feature required"));
        }
        let mut out: Vec<(String, f64)> = Vec::new();
        for (g, &c) in groups.iter().zip(&self.contributions) {
            match out.iter_mut().find(|(name, _)| name == g) {
                Some((_, v)) => *v += c,
                None => out.push((g.clone(), c)),
            }
        }
        Ok(out)
    }
}

/// Reference margin shared by every row: base score plus each tree's
/// expected output.
pub fn base_value(model: &TreeEnsembleModel) -> f64 {
    model.base_score + model.trees.iter().map(expected_value).sum::<f64>()
}

pub fn explain_row(model: &TreeEnsembleModel, row: &[f64]) -> Result<ShapExplanation> {
    if row.len() != model.feature_names.len() {
        return Err(Error::FeatureMismatch(format!(
            "row has {} values, model expects {}",
            row.len(),
            model.feature_names.len()
        )));
    }
    let mut phi = vec![0.0; row.len()];
    for t in &model.trees {
        tree_contributions(t, row, &mut phi);
    }
    Ok(ShapExplanation {
        base_value: base_value(model),
        contributions: phi,
        margin: model.predict_margin_row(row),
    })
}

/// Explanation of row `i` of a matrix whose columns match the model.
pub fn tree_shap(model: &TreeEnsembleModel, rows: &FeatureMatrix, i: usize) -> Result<ShapExplanation> {
    check_columns(model, rows)?;
    explain_row(model, rows.row(i))
}

fn check_columns(model: &TreeEnsembleModel, rows: &FeatureMatrix) -> Result<()> {
    if rows.column_names != model.feature_names {
        return Err(Error::FeatureMismatch(
            "matrix columns differ from model features".into(),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapSummary {
    pub feature_names: Vec<String>,
    pub base_value: f64,
    /// Row-major N x P attributions.
    pub values: Vec<f64>,
    pub n_rows: usize,
    pub mean_abs: Vec<f64>,
    /// Feature indices by decreasing mean |SHAP|, ties by column order.
    pub ranking: Vec<usize>,
}

impl ShapSummary {
    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.feature_names.len();
        &self.values[i * p..(i + 1) * p]
    }

    /// Mean |SHAP| of each group's summed attribution.
    pub fn group_importance(&self, groups: &[String]) -> Vec<(String, f64)> {
        let mut names: Vec<String> = Vec::new();
        let idx: Vec<usize> = groups
            .iter()
            .map(|g| match names.iter().position(|n| n == g) {
                Some(k) => k,
                None => {
                    names.push(g.clone());
                    names.len() - 1
                }
            })
            .collect();
        let mut acc = vec![0.0; names.len()];
        let mut sums = vec![0.0; names.len()];
        for i in 0..self.n_rows {
            sums.iter_mut().for_each(|s| *s = 0.0);
            for (j, &v) in self.row(i).iter().enumerate() {
                sums[idx[j]] += v;
            }
            for (a, s) in acc.iter_mut().zip(&sums) {
                *a += s.abs();
            }
        }
        let n = self.n_rows.max(1) as f64;
        names.into_iter().zip(acc).map(|(g, a)| (g, a / n)).collect()
    }
}

pub fn summary_stats(model: &TreeEnsembleModel, rows: &FeatureMatrix) -> Result<ShapSummary> {
    check_columns(model, rows)?;
    if rows.n_rows == 0 {
        return Err(invalid("no rows to explain"));
    }
    let p = rows.n_cols();
    let mut values = vec![0.0; rows.n_rows * p];
    values
        .par_chunks_mut(p.max(1))
        .enumerate()
        .for_each(|(i, phi)| {
            let row = rows.row(i);
            for t in &model.trees {
                tree_contributions(t, row, phi);
            }
        });
    let mut mean_abs = vec![0.0; p];
    for i in 0..rows.n_rows {
        for j in 0..p {
            mean_abs[j] += values[i * p + j].abs();
        }
    }
    mean_abs.iter_mut().for_each(|m| *m /= rows.n_rows as f64);
    let mut ranking: Vec<usize> = (0..p).collect();
    ranking.sort_by(|&a, &b| mean_abs[b].total_cmp(&mean_abs[a]).then(a.cmp(&b)));
    Ok(ShapSummary {
        feature_names: model.feature_names.clone(),
        base_value: base_value(model),
        values,
        n_rows: rows.n_rows,
        mean_abs,
        ranking,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DependencePoint {
    pub x: f64,
    pub shap: f64,
    pub color: f64,
}

pub fn dependence_data(
    model: &TreeEnsembleModel,
    rows: &FeatureMatrix,
    feature: &str,
    interaction_feature: &str,
) -> Result<Vec<DependencePoint>> {
    let f = rows
        .column_index(feature)
        .ok_or_else(|| invalid(format!("unknown feature {feature}")))?;
    let c = rows
        .column_index(interaction_feature)
        .ok_or_else(|| invalid(format!("unknown feature {interaction_feature}")))?;
    let s = summary_stats(model, rows)?;
    Ok((0..rows.n_rows)
        .map(|i| DependencePoint {
            x: rows.get(i, f),
            shap: s.row(i)[f],
            color: rows.get(i, c),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaterfallEntry {
    pub name: String,
    /// Raw feature value; absent for the aggregated remainder.
    pub value: Option<f64>,
    pub contribution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waterfall {
    pub base_value: f64,
    pub margin: f64,
    pub probability: f64,
    pub entries: Vec<WaterfallEntry>,
}

pub const OTHER: &str = "other";

pub fn waterfall_data(model: &TreeEnsembleModel, row: &[f64], top_n: usize) -> Result<Waterfall> {
    if top_n == 0 {
        return Err(invalid("top_n must be at least 1"));
    }
    let e = explain_row(model, row)?;
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| {
        e.contributions[b]
            .abs()
            .total_cmp(&e.contributions[a].abs())
            .then(a.cmp(&b))
    });
    let mut entries: Vec<WaterfallEntry> = order
        .iter()
        .take(top_n)
        .map(|&j| WaterfallEntry {
            name: model.feature_names[j].clone(),
            value: Some(row[j]),
            contribution: e.contributions[j],
        })
        .collect();
    if order.len() > top_n {
        entries.push(WaterfallEntry {
            name: OTHER.into(),
            value: None,
            contribution: order[top_n..].iter().map(|&j| e.contributions[j]).sum(),
        });
    }
    Ok(Waterfall {
        base_value: e.base_value,
        margin: e.margin,
        probability: crate::booster::sigmoid(e.margin),
        entries,
    })
}

pub fn write_summary_csv(path: &Path, s: &ShapSummary, row_ids: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["row".to_string()];
    header.extend(s.feature_names.iter().cloned());
    w.write_record(&header)?;
    for i in 0..s.n_rows {
        let id = row_ids.get(i).cloned().unwrap_or_else(|| i.to_string());
        let mut rec = vec![id];
        rec.extend(s.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_importance_csv(path: &Path, s: &ShapSummary) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["rank", "feature", "mean_abs_shap"])?;
    for (k, &j) in s.ranking.iter().enumerate() {
        w.write_record([(k + 1).to_string(), s.feature_names[j].clone(), s.mean_abs[j].to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dependence_csv(path: &Path, points: &[DependencePoint]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "x,shap,color")?;
    for p in points {
        writeln!(f, "{},{},{}", p.x, p.shap, p.color)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::booster::{fit, HyperParams, TrainingMeta, TreeNode};
    use crate::rng::substream;
    use rand::Rng;

    fn model_of(trees: Vec<Tree>, p: usize) -> TreeEnsembleModel {
        TreeEnsembleModel {
            base_score: -1.0,
            learning_rate: 1.0,
            feature_names: (0..p).map(|j| format!("f{j}")).collect(),
            class_weight: 1.0,
            trees,
            training_meta: TrainingMeta {
                seed: 0,
                rounds: 0,
                n_rows: 0,
                n_positive: 0,
                params: HyperParams::default(),
            },
        }
    }

    fn split(f: usize, t: f64, l: usize, r: usize, cover: f64) -> TreeNode {
        TreeNode {
            feature_index: f,
            threshold: t,
            missing_goes_left: true,
            children: Some((l, r)),
            leaf_value: 0.0,
            cover,
        }
    }

    #[test]
    fn empty_ensemble_has_zero_contributions() {
        let m = model_of(vec![], 3);
        let e = explain_row(&m, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(e.contributions, vec![0.0; 3]);
        assert_eq!(e.base_value, -1.0);
        assert_eq!(e.margin, -1.0);
    }

    #[test]
    fn stump_contribution_is_leaf_minus_expectation() {
        let t = Tree {
            nodes: vec![split(1, 0.5, 1, 2, 10.0), TreeNode::leaf(2.0, 4.0), TreeNode::leaf(-1.0, 6.0)],
        };
        let m = model_of(vec![t], 2);
        let e = explain_row(&m, &[9.0, 0.0]).unwrap();
        let mean = 0.4 * 2.0 - 0.6;
        assert!((e.contributions[1] - (2.0 - mean)).abs() < 1e-15);
        assert_eq!(e.contributions[0], 0.0);
    }

    #[test]
    fn interchangeable_features_share_credit() {
        // f0 and f1 play mirrored roles with identical covers
        let t = Tree {
            nodes: vec![
                split(0, 0.5, 1, 2, 8.0),
                split(1, 0.5, 3, 4, 4.0),
                split(1, 0.5, 5, 6, 4.0),
                TreeNode::leaf(0.0, 2.0),
                TreeNode::leaf(1.0, 2.0),
                TreeNode::leaf(1.0, 2.0),
                TreeNode::leaf(3.0, 2.0),
            ],
        };
        let m = model_of(vec![t], 2);
        let e = explain_row(&m, &[1.0, 1.0]).unwrap();
        assert!((e.contributions[0] - e.contributions[1]).abs() < 1e-12);
        assert!((e.base_value + e.contributions.iter().sum::<f64>() - e.margin).abs() < 1e-12);
    }

    #[test]
    fn fitted_model_is_additive_and_groupable() {
        let mut rng = substream(4, 0);
        let mut values = Vec::new();
        let mut target = Vec::new();
        for _ in 0..600 {
            let x: Vec<f64> = (0..4).map(|_| rng.random::<f64>()).collect();
            target.push(u8::from(x[0] + x[1] * x[2] > 0.8));
            values.extend(x);
        }
        let m = FeatureMatrix::new(
            vec!["a".into(), "e0".into(), "e1".into(), "unused".into()],
            vec!["a".into(), "emb".into(), "emb".into(), "unused".into()],
            values,
            target,
        )
        .unwrap();
        let model = fit(&m, &HyperParams { n_rounds: 20, ..Default::default() }, 1).unwrap();
        let s = summary_stats(&model, &m).unwrap();
        for i in 0..m.n_rows {
            let sum: f64 = s.row(i).iter().sum();
            let margin = model.predict_margin_row(m.row(i));
            assert!((s.base_value + sum - margin).abs() < 1e-9);
        }
        let e = tree_shap(&model, &m, 3).unwrap();
        let g = e.grouped(&m.groups).unwrap();
        assert_eq!(g[1].0, "emb");
        assert_eq!(g[1].1, e.contributions[1] + e.contributions[2]);
        let w = waterfall_data(&model, m.row(3), 2).unwrap();
        assert_eq!(w.entries.len(), 3);
        let total: f64 = w.entries.iter().map(|x| x.contribution).sum();
        assert!((w.base_value + total - w.margin).abs() < 1e-9);
        let d = dependence_data(&model, &m, "a", "e0").unwrap();
        assert_eq!(d.len(), m.n_rows);
        assert_eq!(d[5].color, m.get(5, 1));
    }
}
