use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Dense row-major design matrix; `NaN` marks a missing value.
///
/// Every column carries a group name. Columns that must be kept or dropped
/// together (the five sector-embedding dimensions) share a group; every
/// other column is its own group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub column_names: Vec<String>,
    pub groups: Vec<String>,
    pub values: Vec<f64>,
    pub n_rows: usize,
    pub target: Vec<u8>,
    /// Reference year per row; empty when unknown.
    pub vintages: Vec<i32>,
    /// Record identifier per row; empty when unknown.
    pub row_ids: Vec<String>,
}

impl FeatureMatrix {
    pub fn new(
        column_names: Vec<String>,
        groups: Vec<String>,
        values: Vec<f64>,
        target: Vec<u8>,
    ) -> Result<Self> {
        let p = column_names.len();
        if groups.len() != p {
            return Err(invalid("one group entry per column required"));
        }
        let mut seen = HashSet::new();
        for c in &column_names {
            if !seen.insert(c.as_str()) {
                return Err(invalid(format!("duplicate column {c}")));
            }
        }
        let n_rows = target.len();
        if values.len() != n_rows * p {
            return Err(invalid(format!(
                "values length {} does not match {n_rows} rows x {p} columns",
                values.len()
            )));
        }
        if target.iter().any(|&t| t > 1) {
            return Err(invalid("target must be binary"));
        }
        Ok(FeatureMatrix {
            column_names,
            groups,
            values,
            n_rows,
            target,
            vintages: Vec::new(),
            row_ids: Vec::new(),
        })
    }

    /// Every column in its own group.
    pub fn ungrouped(column_names: Vec<String>, values: Vec<f64>, target: Vec<u8>) -> Result<Self> {
        let groups = column_names.clone();
        Self::new(column_names, groups, values, target)
    }

    pub fn with_vintages(mut self, vintages: Vec<i32>) -> Result<Self> {
        if vintages.len() != self.n_rows {
            return Err(invalid("one vintage per row required"));
        }
        self.vintages = vintages;
        Ok(self)
    }

    pub fn with_row_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.n_rows {
            return Err(invalid("one row id per row required"));
        }
        self.row_ids = ids;
        Ok(self)
    }

    pub fn n_cols(&self) -> usize {
        self.column_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.n_cols();
        &self.values[i * p..(i + 1) * p]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_cols() + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows).map(|i| self.get(i, j)).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name)
    }

    pub fn missing_fraction(&self, j: usize) -> f64 {
        if self.n_rows == 0 {
            return 0.0;
        }
        let miss = (0..self.n_rows).filter(|&i| self.get(i, j).is_nan()).count();
        miss as f64 / self.n_rows as f64
    }

    /// Groups in order of first appearance with their column indices.
    pub fn group_members(&self) -> Vec<(String, Vec<usize>)> {
        let mut out: Vec<(String, Vec<usize>)> = Vec::new();
        for (j, g) in self.groups.iter().enumerate() {
            match out.iter_mut().find(|(name, _)| name == g) {
                Some((_, cols)) => cols.push(j),
                None => out.push((g.clone(), vec![j])),
            }
        }
        out
    }

    pub fn select_columns(&self, cols: &[usize]) -> FeatureMatrix {
        let p = self.n_cols();
        let mut values = Vec::with_capacity(self.n_rows * cols.len());
        for i in 0..self.n_rows {
            let row = &self.values[i * p..(i + 1) * p];
            values.extend(cols.iter().map(|&j| row[j]));
        }
        FeatureMatrix {
            column_names: cols.iter().map(|&j| self.column_names[j].clone()).collect(),
            groups: cols.iter().map(|&j| self.groups[j].clone()).collect(),
            values,
            n_rows: self.n_rows,
            target: self.target.clone(),
            vintages: self.vintages.clone(),
            row_ids: self.row_ids.clone(),
        }
    }

    pub fn select_named(&self, names: &[String]) -> Result<FeatureMatrix> {
        let cols = names
            .iter()
            .map(|n| {
                self.column_index(n)
                    .ok_or_else(|| invalid(format!("unknown column {n}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.select_columns(&cols))
    }

    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let p = self.n_cols();
        let mut values = Vec::with_capacity(rows.len() * p);
        for &i in rows {
            values.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            column_names: self.column_names.clone(),
            groups: self.groups.clone(),
            values,
            n_rows: rows.len(),
            target: rows.iter().map(|&i| self.target[i]).collect(),
            vintages: if self.vintages.is_empty() {
                Vec::new()
            } else {
                rows.iter().map(|&i| self.vintages[i]).collect()
            },
            row_ids: if self.row_ids.is_empty() {
                Vec::new()
            } else {
                rows.iter().map(|&i| self.row_ids[i].clone()).collect()
            },
        }
    }

    pub fn positives(&self) -> usize {
        self.target.iter().filter(|&&t| t == 1).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> FeatureMatrix {
        FeatureMatrix::new(
            vec!["a".into(), "e0".into(), "e1".into()],
            vec!["a".into(), "emb".into(), "emb".into()],
            vec![1.0, 2.0, 3.0, f64::NAN, 5.0, 6.0],
            vec![0, 1],
        )
        .unwrap()
    }

    #[test]
    fn shape_checks() {
        assert!(FeatureMatrix::ungrouped(vec!["a".into(), "a".into()], vec![], vec![]).is_err());
        assert!(FeatureMatrix::ungrouped(vec!["a".into()], vec![1.0], vec![0, 1]).is_err());
    }

    #[test]
    fn selection_and_groups() {
        let m = small();
        assert_eq!(m.missing_fraction(0), 0.5);
        let g = m.group_members();
        assert_eq!(g, vec![("a".into(), vec![0]), ("emb".into(), vec![1, 2])]);
        let s = m.select_columns(&[2, 0]);
        assert_eq!(s.row(1)[0], 6.0);
        assert!(s.row(1)[1].is_nan());
        let r = m.select_rows(&[1]);
        assert_eq!(r.target, vec![1]);
        assert_eq!(r.get(0, 2), 6.0);
    }
}
