use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

use super::FeatureMatrix;

/// `1 - R²` below this counts as exact collinearity.
const COLLINEAR_TOL: f64 = 1e-10;

/// Correlation matrix of the selected columns, missing values replaced by
/// the column mean. Constant columns are flagged in the second output.
fn correlation(m: &FeatureMatrix, cols: &[usize]) -> (DMatrix<f64>, Vec<bool>) {
    let k = cols.len();
    let n = m.n_rows as f64;
    let means: Vec<f64> = cols
        .iter()
        .map(|&j| {
            let (s, c) = (0..m.n_rows)
                .map(|i| m.get(i, j))
                .filter(|v| !v.is_nan())
                .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
            if c == 0 {
                0.0
            } else {
                s / c as f64
            }
        })
        .collect();
    let mut cov = DMatrix::<f64>::zeros(k, k);
    let mut centered = vec![0.0; k];
    for i in 0..m.n_rows {
        let row = m.row(i);
        for (a, &j) in cols.iter().enumerate() {
            let v = row[j];
            centered[a] = if v.is_nan() { 0.0 } else { v - means[a] };
        }
        for a in 0..k {
            let ca = centered[a];
            if ca == 0.0 {
                continue;
            }
            for b in a..k {
                cov[(a, b)] += ca * centered[b];
            }
        }
    }
    for a in 0..k {
        for b in a..k {
            cov[(a, b)] /= n;
            cov[(b, a)] = cov[(a, b)];
        }
    }
    let sd: Vec<f64> = (0..k).map(|a| cov[(a, a)].sqrt()).collect();
    let constant: Vec<bool> = sd.iter().map(|&s| s == 0.0 || !s.is_finite()).collect();
    let mut corr = DMatrix::<f64>::zeros(k, k);
    for a in 0..k {
        for b in 0..k {
            corr[(a, b)] = if constant[a] || constant[b] {
                f64::from(u8::from(a == b))
            } else {
                cov[(a, b)] / (sd[a] * sd[b])
            };
        }
    }
    (corr, constant)
}

/// VIF of each column regressed on the others through the correlation
/// matrix; constant columns report 1 and take no part in the regressions.
fn vif_from_corr(corr: &DMatrix<f64>, constant: &[bool]) -> Vec<f64> {
    let k = corr.nrows();
    let active: Vec<usize> = (0..k).filter(|&a| !constant[a]).collect();
    let mut out = vec![1.0; k];
    for &i in &active {
        let others: Vec<usize> = active.iter().copied().filter(|&a| a != i).collect();
        if others.is_empty() {
            continue;
        }
        let q = others.len();
        let sub = DMatrix::from_fn(q, q, |r, c| corr[(others[r], others[c])]);
        let rhs = DVector::from_fn(q, |r, _| corr[(others[r], i)]);
        // pseudo-inverse keeps R² right when the other columns are
        // themselves collinear
        let r2 = match sub.svd(true, true).solve(&rhs, 1e-12) {
            Ok(beta) => rhs.dot(&beta),
            Err(_) => 1.0,
        };
        let resid = 1.0 - r2;
        out[i] = if resid < COLLINEAR_TOL { f64::INFINITY } else { 1.0 / resid };
    }
    out
}

/// Variance inflation factors of the given columns, computed jointly.
pub fn vif_values(m: &FeatureMatrix, cols: &[usize]) -> Vec<f64> {
    let (corr, constant) = correlation(m, cols);
    vif_from_corr(&corr, &constant)
}

/// VIF of one column; infinite values serialize as the string `"inf"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VifEntry {
    pub column: String,
    #[serde(with = "inf_as_string")]
    pub vif: f64,
}

mod inf_as_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("bad VIF {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VifReport {
    /// Dropped columns with their VIF at the time of removal.
    pub dropped: Vec<VifEntry>,
    pub final_vif: Vec<VifEntry>,
}

/// Drops the highest-VIF column outside `keep_list` until every VIF is at
/// most `max_vif`. Ties go to the earlier column.
pub fn vif_prune(m: &FeatureMatrix, max_vif: f64, keep_list: &[String]) -> Result<(FeatureMatrix, VifReport)> {
    if max_vif.is_nan() || max_vif < 1.0 {
        return Err(invalid(format!("max_vif {max_vif} below 1")));
    }
    if m.n_cols() == 0 {
        return Err(Error::EmptyFeatureMatrix);
    }
    if m.n_rows <= m.n_cols() {
        return Err(invalid(format!(
            "VIF pruning needs more rows ({}) than columns ({})",
            m.n_rows,
            m.n_cols()
        )));
    }
    for k in keep_list {
        if m.column_index(k).is_none() {
            log::warn!("keep-list column {k} not present");
        }
    }
    let keep: Vec<bool> = m.column_names.iter().map(|c| keep_list.contains(c)).collect();
    let (corr_all, constant_all) = correlation(m, &(0..m.n_cols()).collect::<Vec<_>>());
    let sub = |cols: &[usize]| {
        let corr = DMatrix::from_fn(cols.len(), cols.len(), |r, c| corr_all[(cols[r], cols[c])]);
        let constant: Vec<bool> = cols.iter().map(|&c| constant_all[c]).collect();
        vif_from_corr(&corr, &constant)
    };

    let kept: Vec<usize> = (0..m.n_cols()).filter(|&j| keep[j]).collect();
    let kv = sub(&kept);
    let clash: Vec<&str> = kept
        .iter()
        .zip(&kv)
        .filter(|(_, v)| v.is_infinite())
        .map(|(&j, _)| m.column_names[j].as_str())
        .collect();
    if !clash.is_empty() {
        return Err(Error::KeepListConflict(format!(
            "perfectly collinear keep-list columns: {}",
            clash.join(", ")
        )));
    }

    let mut current: Vec<usize> = (0..m.n_cols()).collect();
    let mut dropped = Vec::new();
    loop {
        let v = sub(&current);
        let worst = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if worst <= max_vif {
            let final_vif = current
                .iter()
                .zip(&v)
                .map(|(&j, &x)| VifEntry { column: m.column_names[j].clone(), vif: x })
                .collect();
            return Ok((m.select_columns(&current), VifReport { dropped, final_vif }));
        }
        let pick = current
            .iter()
            .enumerate()
            .filter(|(_, &j)| !keep[j])
            .fold(None, |best: Option<(usize, f64)>, (pos, _)| match best {
                Some((_, b)) if b >= v[pos] => best,
                _ => Some((pos, v[pos])),
            });
        let Some((pos, val)) = pick else {
            return Err(Error::KeepListConflict(format!(
                "only keep-list columns remain and the largest VIF is {worst}"
            )));
        };
        let j = current.remove(pos);
        log::debug!("vif: dropping {} ({val})", m.column_names[j]);
        dropped.push(VifEntry { column: m.column_names[j].clone(), vif: val });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn matrix(cols: Vec<Vec<f64>>) -> FeatureMatrix {
        let n = cols[0].len();
        let names: Vec<String> = (0..cols.len()).map(|j| format!("x{}", j + 1)).collect();
        let mut values = Vec::new();
        for i in 0..n {
            values.extend(cols.iter().map(|c| c[i]));
        }
        FeatureMatrix::ungrouped(names, values, vec![0; n]).unwrap()
    }

    fn normals(n: usize, stream: u64) -> Vec<f64> {
        let mut rng = substream(77, stream);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn orthogonal_columns_have_unit_vif() {
        let a = vec![1.0, -1.0, 1.0, -1.0];
        let b = vec![1.0, 1.0, -1.0, -1.0];
        let c = vec![1.0, -1.0, -1.0, 1.0];
        let m = matrix(vec![a.iter().chain(&a).copied().collect(), b.iter().chain(&b).copied().collect(), c.iter().chain(&c).copied().collect()]);
        for v in vif_values(&m, &[0, 1, 2]) {
            assert!((v - 1.0).abs() < 1e-12);
        }
        let (out, rep) = vif_prune(&m, 10.0, &[]).unwrap();
        assert_eq!(out.n_cols(), 3);
        assert!(rep.dropped.is_empty());
    }

    #[test]
    fn duplicate_column_is_infinite_and_one_copy_goes() {
        let a = normals(200, 1);
        let b = normals(200, 2);
        let m = matrix(vec![a.clone(), b, a]);
        let v = vif_values(&m, &[0, 1, 2]);
        assert!(v[0].is_infinite() && v[2].is_infinite());
        let (out, rep) = vif_prune(&m, 10.0, &[]).unwrap();
        assert_eq!(out.column_names, vec!["x2", "x3"]);
        assert_eq!(rep.dropped[0].column, "x1");
        let (out, _) = vif_prune(&m, 10.0, &["x1".to_string()]).unwrap();
        assert_eq!(out.column_names, vec!["x1", "x2"]);
        assert!(matches!(
            vif_prune(&m, 10.0, &["x1".to_string(), "x3".to_string()]),
            Err(Error::KeepListConflict(_))
        ));
    }

    #[test]
    fn near_sum_drops_one_of_three() {
        let x1 = normals(1000, 3);
        let x2 = normals(1000, 4);
        let e = normals(1000, 5);
        let x3: Vec<f64> = (0..1000).map(|i| x1[i] + x2[i] + 0.01 * e[i]).collect();
        let m = matrix(vec![x1, x2, x3]);
        let (out, rep) = vif_prune(&m, 10.0, &[]).unwrap();
        assert_eq!(rep.dropped.len(), 1);
        assert_eq!(out.n_cols(), 2);
        for e in rep.final_vif {
            assert!(e.vif <= 10.0);
        }
    }

    #[test]
    fn constant_column_is_harmless() {
        let m = matrix(vec![normals(50, 6), vec![3.0; 50]]);
        assert_eq!(vif_values(&m, &[0, 1]), vec![1.0, 1.0]);
    }
}
