use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub const TAU2_FLOOR: f64 = 1e-12;

/// James-Stein shrinkage weight `B = (s²/n) / (s²/n + τ²)`.
pub fn shrinkage(s2: f64, n: f64, tau2: f64) -> f64 {
    let v = s2 / n;
    let tau2 = tau2.max(TAU2_FLOOR);
    v / (v + tau2)
}

/// Encoded value of one category: `(1 - B)·ȳ_j + B·ȳ`.
pub fn js_value(category_mean: f64, n: f64, global_mean: f64, s2: f64, tau2: f64) -> f64 {
    let b = shrinkage(s2, n, tau2);
    (1.0 - b) * category_mean + b * global_mean
}

/// Fitted James-Stein target encoder for one categorical column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderState {
    pub column: String,
    pub global_mean: f64,
    pub encoded: BTreeMap<String, f64>,
    pub shrinkage: BTreeMap<String, f64>,
    /// Pooled within-category variance.
    pub s2: f64,
    /// Variance of the category means (floored).
    pub tau2: f64,
}

impl EncoderState {
    /// `s²` pools within-category squared deviations over `N - J` degrees of
    /// freedom; `τ²` is the population variance of the unweighted category
    /// means.
    pub fn fit(column: &str, categories: &[String], target: &[f64]) -> Result<Self> {
        if categories.len() != target.len() {
            return Err(invalid("categories and target differ in length"));
        }
        let mut groups: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
        for (c, &y) in categories.iter().zip(target) {
            let e = groups.entry(c.as_str()).or_insert((0.0, 0.0));
            e.0 += 1.0;
            e.1 += y;
        }
        if groups.len() < 2 {
            return Err(invalid(format!(
                "{column}: target encoding needs at least two categories"
            )));
        }
        let n = target.len() as f64;
        let global_mean = target.iter().sum::<f64>() / n;
        let means: BTreeMap<&str, f64> = groups.iter().map(|(k, (c, s))| (*k, s / c)).collect();
        let ss: f64 = categories
            .iter()
            .zip(target)
            .map(|(c, &y)| (y - means[c.as_str()]).powi(2))
            .sum();
        let dof = n - groups.len() as f64;
        let s2 = if dof > 0.0 { ss / dof } else { 0.0 };
        let j = means.len() as f64;
        let mean_of_means = means.values().sum::<f64>() / j;
        let tau2 = (means.values().map(|m| (m - mean_of_means).powi(2)).sum::<f64>() / j).max(TAU2_FLOOR);
        let mut encoded = BTreeMap::new();
        let mut weights = BTreeMap::new();
        for (k, (count, _)) in &groups {
            let b = shrinkage(s2, *count, tau2);
            weights.insert(k.to_string(), b);
            encoded.insert(k.to_string(), (1.0 - b) * means[k] + b * global_mean);
        }
        Ok(EncoderState {
            column: column.to_string(),
            global_mean,
            encoded,
            shrinkage: weights,
            s2,
            tau2,
        })
    }

    /// Encoded value; unseen categories map to the global mean.
    pub fn transform(&self, category: &str) -> f64 {
        self.encoded.get(category).copied().unwrap_or(self.global_mean)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cats(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn formula_with_given_variances() {
        let b = shrinkage(0.24, 50.0, 0.01);
        assert!((b - 0.324_324_324).abs() < 1e-9);
        let lo = js_value(0.2, 50.0, 0.3, 0.24, 0.01);
        let hi = js_value(0.4, 50.0, 0.3, 0.24, 0.01);
        assert!((lo - (0.2 + 0.1 * b)).abs() < 1e-15);
        assert!((hi - (0.4 - 0.1 * b)).abs() < 1e-15);
        assert!((lo + hi - 0.6).abs() < 1e-15);
    }

    #[test]
    fn fitted_state_matches_formula() {
        let mut c = Vec::new();
        let mut y = Vec::new();
        for i in 0..50 {
            c.push("a".to_string());
            y.push(f64::from(u8::from(i < 10)));
            c.push("b".to_string());
            y.push(f64::from(u8::from(i < 20)));
        }
        let e = EncoderState::fit("legal_type", &c, &y).unwrap();
        let s2 = (50.0 * 0.16 + 50.0 * 0.24) / 98.0;
        assert!((e.s2 - s2).abs() < 1e-12);
        assert!((e.tau2 - 0.01).abs() < 1e-12);
        let want = js_value(0.2, 50.0, 0.3, s2, 0.01);
        assert!((e.transform("a") - want).abs() < 1e-12);
        assert_eq!(e.transform("zzz"), e.global_mean);
    }

    #[test]
    fn constant_target_encodes_to_global_mean() {
        let e = EncoderState::fit("x", &cats(&["a", "a", "b", "c"]), &[1.0; 4]).unwrap();
        for v in e.encoded.values() {
            assert_eq!(*v, 1.0);
        }
        assert!(EncoderState::fit("x", &cats(&["a", "a"]), &[1.0, 0.0]).is_err());
    }

    #[test]
    fn large_categories_approach_their_mean() {
        let mut c = Vec::new();
        let mut y = Vec::new();
        for i in 0..200_000 {
            c.push(if i % 2 == 0 { "a" } else { "b" }.to_string());
            y.push(f64::from(u8::from(i % 2 == 0 && i % 10 == 0)));
        }
        let e = EncoderState::fit("x", &c, &y).unwrap();
        assert!((e.transform("a") - 0.2).abs() < 1e-4);
        assert!(e.transform("b").abs() < 1e-4);
    }

    proptest! {
        #[test]
        fn encodings_between_category_and_global_mean_and_shift_consistent(
            rows in prop::collection::vec((0u8..4, any::<bool>()), 8..80),
            shift in -5.0f64..5.0
        ) {
            let c: Vec<String> = rows.iter().map(|r| format!("k{}", r.0)).collect();
            let y: Vec<f64> = rows.iter().map(|r| f64::from(u8::from(r.1))).collect();
            let distinct: std::collections::BTreeSet<_> = c.iter().collect();
            prop_assume!(distinct.len() >= 2);
            let e = EncoderState::fit("x", &c, &y).unwrap();
            for (k, &v) in &e.encoded {
                let idx: Vec<usize> = (0..c.len()).filter(|&i| &c[i] == k).collect();
                let m = idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64;
                let (lo, hi) = if m < e.global_mean { (m, e.global_mean) } else { (e.global_mean, m) };
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
            let ys: Vec<f64> = y.iter().map(|v| v + shift).collect();
            let s = EncoderState::fit("x", &c, &ys).unwrap();
            for (k, &v) in &e.encoded {
                prop_assert!((s.encoded[k] - (v + shift)).abs() < 1e-9);
            }
        }
    }
}
