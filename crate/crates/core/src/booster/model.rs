use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

use super::HyperParams;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Probabilities are kept strictly inside (0, 1) even for extreme margins.
pub(crate) fn margin_to_proba(m: f64) -> f64 {
    sigmoid(m).clamp(1e-15, 1.0 - 1e-15)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub feature_index: usize,
    pub threshold: f64,
    pub missing_goes_left: bool,
    /// `(left, right)` node indices; `None` marks a leaf.
    pub children: Option<(usize, usize)>,
    /// Margin contribution, learning rate already applied. Zero on
    /// internal nodes.
    pub leaf_value: f64,
    /// Sum of training hessians routed through the node.
    pub cover: f64,
}

impl TreeNode {
    pub fn leaf(value: f64, cover: f64) -> Self {
        TreeNode {
            feature_index: 0,
            threshold: 0.0,
            missing_goes_left: false,
            children: None,
            leaf_value: value,
            cover,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }

    /// Child taken by value `x`; `None` at a leaf.
    pub fn route(&self, x: f64) -> Option<usize> {
        let (l, r) = self.children?;
        let left = if x.is_nan() {
            self.missing_goes_left
        } else {
            x <= self.threshold
        };
        Some(if left { l } else { r })
    }
}

/// A regression tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FlatTree", into = "FlatTree")]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn leaf_for(&self, row: &[f64]) -> usize {
        let mut i = 0;
        while let Some(next) = self.nodes[i].route(row[self.nodes[i].feature_index]) {
            i = next;
        }
        i
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        self.nodes[self.leaf_for(row)].leaf_value
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.nodes[i].children {
                None => 0,
                Some((l, r)) => 1 + go(t, l).max(go(t, r)),
            }
        }
        go(self, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }
}

#[derive(Serialize, Deserialize)]
struct FlatTree {
    feature: Vec<i64>,
    threshold: Vec<f64>,
    missing_left: Vec<bool>,
    left: Vec<i64>,
    right: Vec<i64>,
    value: Vec<f64>,
    cover: Vec<f64>,
}

impl From<Tree> for FlatTree {
    fn from(t: Tree) -> Self {
        let n = &t.nodes;
        let child = |f: fn((usize, usize)) -> usize| {
            n.iter()
                .map(|x| x.children.map_or(-1, |c| f(c) as i64))
                .collect()
        };
        FlatTree {
            feature: n
                .iter()
                .map(|x| if x.is_leaf() { -1 } else { x.feature_index as i64 })
                .collect(),
            threshold: n.iter().map(|x| x.threshold).collect(),
            missing_left: n.iter().map(|x| x.missing_goes_left).collect(),
            left: child(|c| c.0),
            right: child(|c| c.1),
            value: n.iter().map(|x| x.leaf_value).collect(),
            cover: n.iter().map(|x| x.cover).collect(),
        }
    }
}

impl TryFrom<FlatTree> for Tree {
    type Error = String;

    fn try_from(f: FlatTree) -> std::result::Result<Self, String> {
        let len = f.feature.len();
        let lens = [
            f.threshold.len(),
            f.missing_left.len(),
            f.left.len(),
            f.right.len(),
            f.value.len(),
            f.cover.len(),
        ];
        if len == 0 || lens.iter().any(|&l| l != len) {
            return Err("tree arrays must be non-empty and of equal length".into());
        }
        let mut nodes = Vec::with_capacity(len);
        for i in 0..len {
            let children = match (f.left[i], f.right[i]) {
                (-1, -1) => None,
                (l, r) if l > i as i64 && r > i as i64 && (l as usize) < len && (r as usize) < len => {
                    Some((l as usize, r as usize))
                }
                _ => return Err(format!("node {i}: invalid children")),
            };
            if children.is_some() && f.feature[i] < 0 {
                return Err(format!("node {i}: internal node without feature"));
            }
            nodes.push(TreeNode {
                feature_index: f.feature[i].max(0) as usize,
                threshold: f.threshold[i],
                missing_goes_left: f.missing_left[i],
                children,
                leaf_value: f.value[i],
                cover: f.cover[i],
            });
        }
        Ok(Tree { nodes })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub rounds: usize,
    pub n_rows: usize,
    pub n_positive: usize,
    pub params: HyperParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsembleModel {
    pub base_score: f64,
    pub learning_rate: f64,
    pub feature_names: Vec<String>,
    pub class_weight: f64,
    pub trees: Vec<Tree>,
    pub training_meta: TrainingMeta,
}

impl TreeEnsembleModel {
    pub fn predict_margin_row(&self, row: &[f64]) -> f64 {
        self.base_score + self.trees.iter().map(|t| t.predict(row)).sum::<f64>()
    }

    fn check_columns(&self, rows: &FeatureMatrix) -> Result<()> {
        if rows.column_names != self.feature_names {
            return Err(Error::FeatureMismatch(format!(
                "model expects [{}], got [{}]",
                self.feature_names.join(", "),
                rows.column_names.join(", ")
            )));
        }
        Ok(())
    }

    pub fn predict_margin(&self, rows: &FeatureMatrix) -> Result<Vec<f64>> {
        self.check_columns(rows)?;
        Ok((0..rows.n_rows)
            .map(|i| self.predict_margin_row(rows.row(i)))
            .collect())
    }

    pub fn predict_proba(&self, rows: &FeatureMatrix) -> Result<Vec<f64>> {
        Ok(self
            .predict_margin(rows)?
            .into_iter()
            .map(margin_to_proba)
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
