use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::booster::{fit, HyperParams};
use crate::error::{invalid, Error, Result};
use crate::explain::summary_stats;
use crate::rng::substream;

use super::FeatureMatrix;

pub const SHADOW_PREFIX: &str = "shadow::";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShadowConfig {
    pub rounds: usize,
    pub params: HyperParams,
    /// Share of rows held out for the SHAP importances.
    pub validation_fraction: f64,
    /// Caps on the rows used per round, 0 for no cap.
    pub max_train_rows: usize,
    pub max_shap_rows: usize,
}

impl Default for ShadowConfig {
    fn default() -> Self {
        ShadowConfig {
            rounds: 5,
            params: HyperParams {
                n_rounds: 60,
                max_leaves: 15,
                min_child_weight: 5.0,
                ..HyperParams::default()
            },
            validation_fraction: 0.25,
            max_train_rows: 20_000,
            max_shap_rows: 2_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundImportance {
    pub threshold: f64,
    pub groups: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowReport {
    pub selected_columns: Vec<String>,
    pub selected_groups: Vec<String>,
    /// Rounds in which each group beat the best shadow.
    pub votes: Vec<(String, usize)>,
    pub rounds: Vec<RoundImportance>,
}

fn with_shadows(m: &FeatureMatrix, rows: &[usize], rng: &mut impl rand::Rng) -> Result<FeatureMatrix> {
    let p = m.n_cols();
    let mut names = m.column_names.clone();
    names.extend(m.column_names.iter().map(|c| format!("{SHADOW_PREFIX}{c}")));
    let mut groups = m.groups.clone();
    groups.extend(m.groups.iter().map(|g| format!("{SHADOW_PREFIX}{g}")));
    let mut perms: Vec<Vec<usize>> = Vec::with_capacity(p);
    for _ in 0..p {
        let mut perm = rows.to_vec();
        perm.shuffle(rng);
        perms.push(perm);
    }
    let mut values = Vec::with_capacity(rows.len() * 2 * p);
    for (k, &i) in rows.iter().enumerate() {
        values.extend_from_slice(m.row(i));
        values.extend((0..p).map(|j| m.get(perms[j][k], j)));
    }
    let target = rows.iter().map(|&i| m.target[i]).collect();
    FeatureMatrix::new(names, groups, values, target)
}

/// Boruta-style selection: a group survives a round when its mean |SHAP|
/// (summed within the group) exceeds that of every shadow group; the
/// result keeps groups that survive a strict majority of rounds.
pub fn shadow_select(m: &FeatureMatrix, cfg: &ShadowConfig, seed: u64) -> Result<ShadowReport> {
    if cfg.rounds == 0 {
        return Err(invalid("shadow selection needs at least one round"));
    }
    if !(cfg.validation_fraction > 0.0 && cfg.validation_fraction < 1.0) {
        return Err(invalid("validation fraction must lie in (0,1)"));
    }
    if m.n_cols() == 0 {
        return Err(Error::EmptyFeatureMatrix);
    }
    let real_groups: Vec<String> = m.group_members().into_iter().map(|(g, _)| g).collect();
    let mut votes = vec![0usize; real_groups.len()];
    let mut rounds = Vec::with_capacity(cfg.rounds);
    for r in 0..cfg.rounds {
        let mut rng = substream(seed, r as u64);
        let mut idx: Vec<usize> = (0..m.n_rows).collect();
        idx.shuffle(&mut rng);
        let n_val = ((m.n_rows as f64) * cfg.validation_fraction).round() as usize;
        let (val, train) = idx.split_at(n_val.clamp(1, m.n_rows - 1));
        let cap = |v: &[usize], c: usize| -> Vec<usize> {
            let mut v = if c > 0 && v.len() > c { v[..c].to_vec() } else { v.to_vec() };
            v.sort_unstable();
            v
        };
        let train = cap(train, cfg.max_train_rows);
        let val = cap(val, cfg.max_shap_rows);
        let mut all = train.clone();
        all.extend(&val);
        let aug = with_shadows(m, &all, &mut rng)?;
        let tr = aug.select_rows(&(0..train.len()).collect::<Vec<_>>());
        let va = aug.select_rows(&(train.len()..all.len()).collect::<Vec<_>>());
        let model = fit(&tr, &cfg.params, seed.wrapping_add(r as u64))?;
        let summary = summary_stats(&model, &va)?;
        let imp = summary.group_importance(&aug.groups);
        let threshold = imp
            .iter()
            .filter(|(g, _)| g.starts_with(SHADOW_PREFIX))
            .map(|(_, v)| *v)
            .fold(0.0, f64::max);
        let real: Vec<(String, f64)> = imp
            .into_iter()
            .filter(|(g, _)| !g.starts_with(SHADOW_PREFIX))
            .collect();
        for (k, (_, v)) in real.iter().enumerate() {
            if *v > threshold {
                votes[k] += 1;
            }
        }
        log::debug!("shadow round {r}: threshold {threshold}");
        rounds.push(RoundImportance { threshold, groups: real });
    }
    let selected_groups: Vec<String> = real_groups
        .iter()
        .zip(&votes)
        .filter(|(_, &v)| 2 * v > cfg.rounds)
        .map(|(g, _)| g.clone())
        .collect();
    let selected_columns = m
        .column_names
        .iter()
        .zip(&m.groups)
        .filter(|(_, g)| selected_groups.contains(g))
        .map(|(c, _)| c.clone())
        .collect();
    Ok(ShadowReport {
        selected_columns,
        selected_groups,
        votes: real_groups.into_iter().zip(votes).collect(),
        rounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::booster::sigmoid;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn keeps_signal_drops_noise_and_moves_groups_together() {
        let mut rng = substream(5, 0);
        let n = 3000;
        let mut values = Vec::new();
        let mut target = Vec::new();
        for _ in 0..n {
            let s: f64 = rng.sample(StandardNormal);
            let noise: f64 = rng.sample(StandardNormal);
            let e: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
            let y = rng.random::<f64>() < sigmoid(-2.0 + 2.0 * s + 0.8 * (e[0] + e[1] + e[2]));
            values.extend([s, noise, e[0], e[1], e[2]]);
            target.push(u8::from(y));
        }
        let m = FeatureMatrix::new(
            ["signal", "noise", "emb_0", "emb_1", "emb_2"].map(String::from).to_vec(),
            ["signal", "noise", "emb", "emb", "emb"].map(String::from).to_vec(),
            values,
            target,
        )
        .unwrap();
        let r = shadow_select(&m, &ShadowConfig::default(), 3).unwrap();
        assert_eq!(r.selected_groups, vec!["signal", "emb"]);
        assert_eq!(r.selected_columns, vec!["signal", "emb_0", "emb_1", "emb_2"]);
        assert!(r.selected_columns.iter().all(|c| !c.starts_with(SHADOW_PREFIX)));
        assert_eq!(r, shadow_select(&m, &ShadowConfig::default(), 3).unwrap());
    }

    #[test]
    fn single_class_is_an_error() {
        let m = FeatureMatrix::ungrouped(vec!["a".into()], (0..40).map(f64::from).collect(), vec![0; 40]).unwrap();
        assert!(shadow_select(&m, &ShadowConfig::default(), 0).is_err());
    }
}
