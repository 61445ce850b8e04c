//! Feature pipeline: sparse-column removal, KPIs, target encoding,
//! collinearity pruning and shadow-feature selection.

mod encode;
mod kpi;
mod matrix;
mod select;
mod vif;

pub use encode::{js_value, shrinkage, EncoderState, TAU2_FLOOR};
pub use kpi::{bucket, make_kpis, safe_ratio, KpiConfig, Kpis};
pub use matrix::FeatureMatrix;
pub use select::{shadow_select, RoundImportance, ShadowConfig, ShadowReport, SHADOW_PREFIX};
pub use vif::{vif_prune, vif_values, VifEntry, VifReport};

use serde::{Deserialize, Serialize};

use crate::data::{CompanySnapshot, LabeledRecord};
use crate::error::{invalid, Error, Result};

pub const DEFAULT_SPARSE_THRESHOLD: f64 = 0.20;
pub const SECTOR_GROUP: &str = "sector_embedding";

/// Drops every group holding a column whose missing fraction is strictly
/// above `threshold`. Returns the reduced matrix and the dropped columns.
pub fn drop_sparse(m: &FeatureMatrix, threshold: f64) -> Result<(FeatureMatrix, Vec<String>)> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(invalid(format!("sparse threshold {threshold} outside (0,1)")));
    }
    let sparse_groups: Vec<&String> = (0..m.n_cols())
        .filter(|&j| m.missing_fraction(j) > threshold)
        .map(|j| &m.groups[j])
        .collect();
    let (keep, dropped): (Vec<usize>, Vec<usize>) =
        (0..m.n_cols()).partition(|&j| !sparse_groups.contains(&&m.groups[j]));
    if keep.is_empty() {
        return Err(Error::EmptyFeatureMatrix);
    }
    let names = dropped.iter().map(|&j| m.column_names[j].clone()).collect();
    Ok((m.select_columns(&keep), names))
}

const RAW_COLUMNS: [&str; 15] = [
    "rt_mortgages_balance",
    "rt_non_mortgages_balance",
    "nrt_balance",
    "nrt_used",
    "nrt_past_due_balance",
    "worst_payment_delay_6m",
    "max_past_due_days_6m",
    "def_no",
    "past_due_0_contracts",
    "past_due_0_contracts_12m",
    "nrt_contracts",
    "nrt_contracts_12m",
    "contracts_3m",
    "contracts_4_12m",
    "protest_present",
];

fn raw_values(s: &CompanySnapshot) -> [f64; 15] {
    [
        s.rt_mortgages_balance,
        s.rt_non_mortgages_balance,
        s.nrt_balance,
        s.nrt_used,
        s.nrt_past_due_balance,
        f64::from(s.worst_payment_delay_6m),
        f64::from(s.max_past_due_days_6m),
        f64::from(s.def_no),
        f64::from(s.past_due_0_contracts),
        f64::from(s.past_due_0_contracts_12m),
        f64::from(s.nrt_contracts),
        f64::from(s.nrt_contracts_12m),
        f64::from(s.contracts_3m),
        f64::from(s.contracts_4_12m),
        f64::from(u8::from(s.protest_present)),
    ]
}

/// Value of a raw column, a KPI or `rt_balance` for one snapshot.
pub fn snapshot_value(s: &CompanySnapshot, name: &str, kpi: &KpiConfig) -> Option<f64> {
    if name == "rt_balance" {
        return Some(s.rt_balance());
    }
    if let Some(i) = RAW_COLUMNS.iter().position(|c| *c == name) {
        return Some(raw_values(s)[i]);
    }
    Kpis::NAMES
        .iter()
        .position(|c| *c == name)
        .map(|i| make_kpis(s, kpi).values()[i])
}

/// Every candidate column with its group, before any selection.
pub fn candidate_columns() -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = RAW_COLUMNS
        .iter()
        .map(|c| (c.to_string(), c.to_string()))
        .collect();
    for c in ["legal_type", "special_status"] {
        out.push((c.into(), c.into()));
    }
    for k in 0..5 {
        out.push((format!("sector_{k}"), SECTOR_GROUP.into()));
    }
    out.extend(Kpis::NAMES.iter().map(|c| (c.to_string(), c.to_string())));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub kpi: KpiConfig,
    pub sparse_threshold: f64,
    pub max_vif: f64,
    pub keep_list: Vec<String>,
    /// Shadow selection; `None` keeps every column that survives VIF.
    pub shadow: Option<ShadowConfig>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            kpi: KpiConfig::default(),
            sparse_threshold: DEFAULT_SPARSE_THRESHOLD,
            max_vif: 10.0,
            keep_list: Vec::new(),
            shadow: Some(ShadowConfig::default()),
        }
    }
}

/// Fitted feature pipeline, applied identically to every split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Featurizer {
    pub config: FeatureConfig,
    pub encoders: Vec<EncoderState>,
    pub columns: Vec<String>,
    pub dropped_sparse: Vec<String>,
    pub vif: VifReport,
    pub shadow: Option<ShadowReport>,
}

fn categorical(records: &[LabeledRecord], column: &str) -> Vec<String> {
    records
        .iter()
        .map(|r| match column {
            "legal_type" => r.snapshot.legal_type.as_str().to_string(),
            _ => r.snapshot.special_status.as_str().to_string(),
        })
        .collect()
}

fn encode_or_constant(column: &str, cats: &[String], y: &[f64]) -> EncoderState {
    EncoderState::fit(column, cats, y).unwrap_or_else(|_| {
        // a single observed category carries no information; every value
        // maps to the global mean
        let mean = y.iter().sum::<f64>() / y.len().max(1) as f64;
        EncoderState {
            column: column.to_string(),
            global_mean: mean,
            encoded: Default::default(),
            shrinkage: Default::default(),
            s2: 0.0,
            tau2: TAU2_FLOOR,
        }
    })
}

impl Featurizer {
    /// Full candidate matrix with the given encoders.
    fn candidate_matrix(records: &[LabeledRecord], encoders: &[EncoderState], kpi: &KpiConfig) -> Result<FeatureMatrix> {
        let cols = candidate_columns();
        let mut values = Vec::with_capacity(records.len() * cols.len());
        for r in records {
            let s = &r.snapshot;
            values.extend(raw_values(s));
            values.push(encoders[0].transform(s.legal_type.as_str()));
            values.push(encoders[1].transform(s.special_status.as_str()));
            values.extend(s.sector_vector);
            values.extend(make_kpis(s, kpi).values());
        }
        let (names, groups): (Vec<String>, Vec<String>) = cols.into_iter().unzip();
        FeatureMatrix::new(names, groups, values, records.iter().map(|r| r.target).collect())?
            .with_vintages(records.iter().map(|r| r.vintage()).collect())?
            .with_row_ids(records.iter().map(|r| r.snapshot.company_id.clone()).collect())
    }

    pub fn fit(records: &[LabeledRecord], config: &FeatureConfig, seed: u64) -> Result<Featurizer> {
        if records.is_empty() {
            return Err(Error::EmptyFeatureMatrix);
        }
        let y: Vec<f64> = records.iter().map(|r| f64::from(r.target)).collect();
        let encoders = ["legal_type", "special_status"]
            .iter()
            .map(|c| encode_or_constant(c, &categorical(records, c), &y))
            .collect::<Vec<_>>();
        let full = Self::candidate_matrix(records, &encoders, &config.kpi)?;
        let (m, dropped_sparse) = drop_sparse(&full, config.sparse_threshold)?;
        let mut keep = config.keep_list.clone();
        keep.extend(
            m.column_names
                .iter()
                .zip(&m.groups)
                .filter(|(_, g)| g.as_str() == SECTOR_GROUP)
                .map(|(c, _)| c.clone()),
        );
        let (m, vif) = vif_prune(&m, config.max_vif, &keep)?;
        let (columns, shadow) = match &config.shadow {
            Some(cfg) => {
                let rep = shadow_select(&m, cfg, seed)?;
                if rep.selected_columns.is_empty() {
                    return Err(Error::EmptyFeatureMatrix);
                }
                (rep.selected_columns.clone(), Some(rep))
            }
            None => (m.column_names.clone(), None),
        };
        Ok(Featurizer {
            config: config.clone(),
            encoders,
            columns,
            dropped_sparse,
            vif,
            shadow,
        })
    }

    pub fn transform(&self, records: &[LabeledRecord]) -> Result<FeatureMatrix> {
        let full = Self::candidate_matrix(records, &self.encoders, &self.config.kpi)?;
        full.select_named(&self.columns)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{LegalType, YearMonth};

    #[test]
    fn sparse_boundary_is_strict() {
        let mut values = Vec::new();
        for i in 0..100 {
            values.push(1.0);
            values.push(if i < 20 { f64::NAN } else { 1.0 });
            values.push(if i < 21 { f64::NAN } else { 1.0 });
        }
        let m = FeatureMatrix::ungrouped(
            vec!["full".into(), "p20".into(), "p21".into()],
            values,
            vec![0; 100],
        )
        .unwrap();
        let (out, dropped) = drop_sparse(&m, 0.20).unwrap();
        assert_eq!(out.column_names, vec!["full", "p20"]);
        assert_eq!(dropped, vec!["p21"]);
        let all_nan = FeatureMatrix::ungrouped(vec!["x".into()], vec![f64::NAN; 3], vec![0; 3]).unwrap();
        assert!(matches!(drop_sparse(&all_nan, 0.2), Err(Error::EmptyFeatureMatrix)));
    }

    #[test]
    fn featurizer_transforms_consistently() {
        let mut records = Vec::new();
        for i in 0..200 {
            let mut s = CompanySnapshot::empty(format!("c{i}"), YearMonth::new(2019 + (i % 2), 3).unwrap());
            s.legal_type = LegalType::ALL[i as usize % 3];
            s.rt_mortgages_balance = f64::from(i * 7 % 13);
            s.rt_non_mortgages_balance = f64::from(i * 3 % 11);
            s.nrt_balance = f64::from(i % 17) * 10.0;
            s.nrt_used = f64::from(i % 17) * f64::from(i % 5);
            s.max_past_due_days_6m = (i as u32 * 13) % 200;
            s.sector_vector = [f64::from(i % 4), f64::from(i % 7), f64::from(i % 9), f64::from(i % 11), f64::from(i % 3)];
            records.push(LabeledRecord::new(s, u8::from(i % 5 == 0)));
        }
        let cfg = FeatureConfig { shadow: None, ..Default::default() };
        let f = Featurizer::fit(&records, &cfg, 1).unwrap();
        assert!(f.vif.dropped.iter().any(|e| e.column.starts_with("rt_")));
        let m = f.transform(&records).unwrap();
        assert_eq!(m.column_names, f.columns);
        assert_eq!(m.n_rows, 200);
        assert!(m.column_names.iter().filter(|c| c.starts_with("sector_")).count() == 5);
        let json = serde_json::to_string(&f).unwrap();
        let back: Featurizer = serde_json::from_str(&json).unwrap();
        assert_eq!(back.transform(&records).unwrap(), m);
    }
}
