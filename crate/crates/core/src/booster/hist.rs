use rayon::prelude::*;

use crate::features::FeatureMatrix;

/// Column-major binned copy of a feature matrix.
///
/// A value `x` of feature `f` falls in bin `#{t in thresholds[f] : t < x}`;
/// `NaN` falls in the extra bin `thresholds[f].len() + 1`. Splitting at
/// bin `b` therefore sends exactly the rows with `x <= thresholds[f][b]`
/// to the left child.
pub(crate) struct BinnedData {
    pub n_rows: usize,
    pub n_features: usize,
    pub stride: usize,
    pub bins: Vec<u8>,
    pub thresholds: Vec<Vec<f64>>,
}

impl BinnedData {
    pub fn new(m: &FeatureMatrix, max_bins: usize) -> Self {
        let (n, p) = (m.n_rows, m.n_cols());
        let thresholds: Vec<Vec<f64>> = (0..p)
            .into_par_iter()
            .map(|j| bin_thresholds(&m.column(j), max_bins))
            .collect();
        let mut bins = vec![0u8; n * p];
        bins.par_chunks_mut(n.max(1))
            .zip(thresholds.par_iter())
            .enumerate()
            .for_each(|(j, (col, t))| {
                for (i, b) in col.iter_mut().enumerate() {
                    *b = bin_of(m.get(i, j), t) as u8;
                }
            });
        BinnedData {
            n_rows: n,
            n_features: p,
            stride: max_bins + 1,
            bins,
            thresholds,
        }
    }

    pub fn column(&self, j: usize) -> &[u8] {
        &self.bins[j * self.n_rows..(j + 1) * self.n_rows]
    }

    pub fn missing_bin(&self, j: usize) -> usize {
        self.thresholds[j].len() + 1
    }
}

pub(crate) fn bin_of(x: f64, thresholds: &[f64]) -> usize {
    if x.is_nan() {
        thresholds.len() + 1
    } else {
        thresholds.partition_point(|&t| t < x)
    }
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m >= b {
        a
    } else {
        m
    }
}

/// Split candidates for one column: midpoints between consecutive distinct
/// values when there are at most `max_bins` of them, quantile cuts otherwise.
pub(crate) fn bin_thresholds(values: &[f64], max_bins: usize) -> Vec<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return Vec::new();
    }
    v.sort_by(f64::total_cmp);
    let mut distinct: Vec<(f64, usize)> = Vec::new();
    for x in v.iter().copied() {
        match distinct.last_mut() {
            Some((d, c)) if *d == x => *c += 1,
            _ => distinct.push((x, 1)),
        }
    }
    if distinct.len() <= max_bins {
        return distinct
            .windows(2)
            .map(|w| midpoint(w[0].0, w[1].0))
            .collect();
    }
    let n = v.len() as f64;
    let per_bin = n / max_bins as f64;
    let mut out = Vec::with_capacity(max_bins - 1);
    let mut cum = 0usize;
    let mut next_cut = per_bin;
    for k in 0..distinct.len() - 1 {
        cum += distinct[k].1;
        if cum as f64 >= next_cut && out.len() < max_bins - 1 {
            out.push(midpoint(distinct[k].0, distinct[k + 1].0));
            while next_cut <= cum as f64 {
                next_cut += per_bin;
            }
        }
    }
    out
}

/// Gradient and hessian sums per (feature, bin); feature `j` occupies
/// `[j * stride, (j + 1) * stride)`.
pub(crate) fn build_histogram(
    data: &BinnedData,
    rows: &[u32],
    grad: &[f64],
    hess: &[f64],
) -> Vec<[f64; 2]> {
    let mut hist = vec![[0.0f64; 2]; data.n_features * data.stride];
    hist.par_chunks_mut(data.stride)
        .enumerate()
        .for_each(|(j, h)| {
            let col = data.column(j);
            for &r in rows {
                let r = r as usize;
                let slot = &mut h[col[r] as usize];
                slot[0] += grad[r];
                slot[1] += hess[r];
            }
        });
    hist
}

pub(crate) fn subtract(parent: &[[f64; 2]], child: &[[f64; 2]]) -> Vec<[f64; 2]> {
    parent
        .iter()
        .zip(child)
        .map(|(p, c)| [p[0] - c[0], p[1] - c[1]])
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct SplitInfo {
    pub feature: usize,
    pub bin: usize,
    pub missing_left: bool,
    pub gain: f64,
    pub left_grad: f64,
    pub left_hess: f64,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct SplitRule {
    pub lambda: f64,
    pub min_child_weight: f64,
    pub min_split_gain: f64,
}

fn score(g: f64, h: f64, lambda: f64) -> f64 {
    g * g / (h + lambda)
}

/// Best split over all features of a node whose totals are `(g, h)`.
/// Ties keep the earliest feature, then the lowest bin.
pub(crate) fn best_split(
    data: &BinnedData,
    hist: &[[f64; 2]],
    g: f64,
    h: f64,
    rule: SplitRule,
) -> Option<SplitInfo> {
    let parent = score(g, h, rule.lambda);
    let mut best: Option<SplitInfo> = None;
    for j in 0..data.n_features {
        let n_value_bins = data.thresholds[j].len() + 1;
        let hj = &hist[j * data.stride..(j + 1) * data.stride];
        let miss = hj[data.missing_bin(j)];
        let has_missing = miss[1] > 0.0;
        let (mut gl, mut hl) = (0.0, 0.0);
        for (b, bin) in hj.iter().enumerate().take(n_value_bins - 1) {
            gl += bin[0];
            hl += bin[1];
            let directions: &[bool] = if has_missing { &[true, false] } else { &[false] };
            for &ml in directions {
                let (gl2, hl2) = if ml { (gl + miss[0], hl + miss[1]) } else { (gl, hl) };
                let (gr2, hr2) = (g - gl2, h - hl2);
                if hl2 < rule.min_child_weight || hr2 < rule.min_child_weight {
                    continue;
                }
                let gain = score(gl2, hl2, rule.lambda) + score(gr2, hr2, rule.lambda) - parent;
                if gain > rule.min_split_gain && best.is_none_or(|s| gain > s.gain) {
                    best = Some(SplitInfo {
                        feature: j,
                        bin: b,
                        missing_left: ml,
                        gain,
                        left_grad: gl2,
                        left_hess: hl2,
                    });
                }
            }
        }
        if !has_missing {
            // no missing rows at training time: route future missing values
            // to the heavier child
            if let Some(s) = best.as_mut().filter(|s| s.feature == j) {
                s.missing_left = s.left_hess >= h - s.left_hess;
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distinct_values_get_midpoints() {
        let t = bin_thresholds(&[3.0, 1.0, f64::NAN, 2.0, 1.0], 64);
        assert_eq!(t, vec![1.5, 2.5]);
        assert_eq!(bin_of(1.0, &t), 0);
        assert_eq!(bin_of(2.0, &t), 1);
        assert_eq!(bin_of(9.0, &t), 2);
        assert_eq!(bin_of(f64::NAN, &t), 3);
    }

    #[test]
    fn quantile_cuts_are_bounded() {
        let v: Vec<f64> = (0..10_000).map(|i| (i as f64).sqrt()).collect();
        let t = bin_thresholds(&v, 64);
        assert!(t.len() <= 63 && t.len() >= 60, "{}", t.len());
        assert!(t.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn adjacent_floats_keep_order() {
        let a = 1.0f64;
        let b = f64::from_bits(a.to_bits() + 1);
        let t = bin_thresholds(&[a, b], 64);
        assert_eq!(bin_of(a, &t), 0);
        assert_eq!(bin_of(b, &t), 1);
    }
}
