use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use csv::StringRecord;
use serde::{Deserialize, Serialize};

use super::{CompanySnapshot, LabeledRecord, LegalType, PriorStatus, SpecialStatus, YearMonth};
use crate::error::{invalid, Result};

pub const SNAPSHOT_COLUMNS: [&str; 25] = [
    "company_id",
    "reference_date",
    "legal_type",
    "special_status",
    "sector_0",
    "sector_1",
    "sector_2",
    "sector_3",
    "sector_4",
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
    "is_private_individual",
];

/// Row count and per-column count of empty cells seen while reading.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows: usize,
    pub missing: BTreeMap<String, usize>,
}

struct Row<'a> {
    rec: &'a StringRecord,
    header: &'a HashMap<String, usize>,
    line: usize,
}

impl<'a> Row<'a> {
    fn raw(&self, col: &str) -> Option<&'a str> {
        self.header
            .get(col)
            .and_then(|&i| self.rec.get(i))
            .map(str::trim)
            .filter(|s| !s.is_empty())
    }

    fn required(&self, col: &str) -> Result<&'a str> {
        self.raw(col)
            .ok_or_else(|| invalid(format!("line {}: missing required {col}", self.line)))
    }

    fn optional<T: std::str::FromStr>(
        &self,
        col: &str,
        report: &mut IngestReport,
    ) -> Result<Option<T>> {
        match self.raw(col) {
            None => {
                *report.missing.entry(col.to_string()).or_default() += 1;
                Ok(None)
            }
            Some(s) => s
                .parse()
                .map(Some)
                .map_err(|_| invalid(format!("line {}: cannot parse {col}={s:?}", self.line))),
        }
    }

    fn flag(&self, col: &str, report: &mut IngestReport) -> Result<bool> {
        match self.raw(col) {
            None => {
                *report.missing.entry(col.to_string()).or_default() += 1;
                Ok(false)
            }
            Some("1") | Some("true") | Some("TRUE") | Some("True") => Ok(true),
            Some("0") | Some("false") | Some("FALSE") | Some("False") => Ok(false),
            Some(s) => Err(invalid(format!(
                "line {}: cannot parse {col}={s:?} as flag",
                self.line
            ))),
        }
    }
}

fn header_index(rec: &StringRecord) -> HashMap<String, usize> {
    rec.iter()
        .enumerate()
        .map(|(i, h)| (h.trim().to_string(), i))
        .collect()
}

fn parse_snapshot(row: &Row<'_>, report: &mut IngestReport) -> Result<CompanySnapshot> {
    let company_id = row.required("company_id")?.to_string();
    let reference_date: YearMonth = row.required("reference_date")?.parse()?;
    let mut s = CompanySnapshot::empty(company_id, reference_date);
    if let Some(lt) = row.optional::<String>("legal_type", report)? {
        s.legal_type = lt.parse::<LegalType>()?;
    }
    if let Some(st) = row.optional::<String>("special_status", report)? {
        s.special_status = st.parse::<SpecialStatus>()?;
    }
    for (i, v) in s.sector_vector.iter_mut().enumerate() {
        *v = row.optional(&format!("sector_{i}"), report)?.unwrap_or(0.0);
    }
    let f = |col: &str, report: &mut IngestReport| -> Result<f64> {
        Ok(row.optional::<f64>(col, report)?.unwrap_or(0.0))
    };
    s.rt_mortgages_balance = f("rt_mortgages_balance", report)?;
    s.rt_non_mortgages_balance = f("rt_non_mortgages_balance", report)?;
    s.nrt_balance = f("nrt_balance", report)?;
    s.nrt_used = f("nrt_used", report)?;
    s.nrt_past_due_balance = f("nrt_past_due_balance", report)?;
    let c = |col: &str, report: &mut IngestReport| -> Result<u32> {
        Ok(row.optional::<u32>(col, report)?.unwrap_or(0))
    };
    s.worst_payment_delay_6m = c("worst_payment_delay_6m", report)?;
    s.max_past_due_days_6m = c("max_past_due_days_6m", report)?;
    s.def_no = c("def_no", report)?;
    s.past_due_0_contracts = c("past_due_0_contracts", report)?;
    s.past_due_0_contracts_12m = c("past_due_0_contracts_12m", report)?;
    s.nrt_contracts = c("nrt_contracts", report)?;
    s.nrt_contracts_12m = c("nrt_contracts_12m", report)?;
    s.contracts_3m = c("contracts_3m", report)?;
    s.contracts_4_12m = c("contracts_4_12m", report)?;
    s.protest_present = row.flag("protest_present", report)?;
    s.is_private_individual = row.flag("is_private_individual", report)?;
    s.validate()
        .map_err(|e| invalid(format!("line {}: {e}", row.line)))?;
    Ok(s)
}

fn snapshot_fields(s: &CompanySnapshot) -> Vec<String> {
    let mut v = vec![
        s.company_id.clone(),
        s.reference_date.to_string(),
        s.legal_type.to_string(),
        s.special_status.to_string(),
    ];
    v.extend(s.sector_vector.iter().map(|x| x.to_string()));
    v.extend(
        [
            s.rt_mortgages_balance,
            s.rt_non_mortgages_balance,
            s.nrt_balance,
            s.nrt_used,
            s.nrt_past_due_balance,
        ]
        .iter()
        .map(|x| x.to_string()),
    );
    v.extend(
        [
            s.worst_payment_delay_6m,
            s.max_past_due_days_6m,
            s.def_no,
            s.past_due_0_contracts,
            s.past_due_0_contracts_12m,
            s.nrt_contracts,
            s.nrt_contracts_12m,
            s.contracts_3m,
            s.contracts_4_12m,
        ]
        .iter()
        .map(|x| x.to_string()),
    );
    v.push(u8::from(s.protest_present).to_string());
    v.push(u8::from(s.is_private_individual).to_string());
    v
}

fn for_each_row<R: Read>(
    reader: R,
    mut f: impl FnMut(&Row<'_>) -> Result<()>,
) -> Result<usize> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let header = header_index(rdr.headers()?);
    let mut rec = StringRecord::new();
    let mut n = 0;
    while rdr.read_record(&mut rec)? {
        n += 1;
        f(&Row {
            rec: &rec,
            header: &header,
            line: n + 1,
        })?;
    }
    Ok(n)
}

pub fn read_snapshots<R: Read>(reader: R) -> Result<(Vec<CompanySnapshot>, IngestReport)> {
    let mut report = IngestReport::default();
    let mut out = Vec::new();
    report.rows = for_each_row(reader, |row| {
        out.push(parse_snapshot(row, &mut report)?);
        Ok(())
    })?;
    Ok((out, report))
}

pub fn read_snapshot_csv(path: &Path) -> Result<(Vec<CompanySnapshot>, IngestReport)> {
    read_snapshots(std::fs::File::open(path)?)
}

pub fn write_snapshots<W: Write>(writer: W, rows: &[CompanySnapshot]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SNAPSHOT_COLUMNS)?;
    for s in rows {
        w.write_record(snapshot_fields(s))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_snapshot_csv(path: &Path, rows: &[CompanySnapshot]) -> Result<()> {
    write_snapshots(std::fs::File::create(path)?, rows)
}

pub fn read_labeled<R: Read>(reader: R) -> Result<(Vec<LabeledRecord>, IngestReport)> {
    let mut report = IngestReport::default();
    let mut out = Vec::new();
    report.rows = for_each_row(reader, |row| {
        let snapshot = parse_snapshot(row, &mut report)?;
        let target: u8 = row
            .required("target")?
            .parse()
            .map_err(|_| invalid(format!("line {}: bad target", row.line)))?;
        if target > 1 {
            return Err(invalid(format!("line {}: target must be 0 or 1", row.line)));
        }
        let mut rec = LabeledRecord::new(snapshot, target);
        if let Some(h) = row.raw("horizon_end") {
            let h: YearMonth = h.parse()?;
            if h != rec.horizon_end {
                return Err(invalid(format!(
                    "line {}: horizon_end {h} is not 12 months after reference",
                    row.line
                )));
            }
        }
        rec.horizon_end = rec.snapshot.reference_date.add_months(12);
        out.push(rec);
        Ok(())
    })?;
    Ok((out, report))
}

pub fn read_labeled_csv(path: &Path) -> Result<(Vec<LabeledRecord>, IngestReport)> {
    read_labeled(std::fs::File::open(path)?)
}

pub fn write_labeled<W: Write>(writer: W, rows: &[LabeledRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = SNAPSHOT_COLUMNS.to_vec();
    header.extend(["target", "horizon_end"]);
    w.write_record(&header)?;
    for r in rows {
        let mut f = snapshot_fields(&r.snapshot);
        f.push(r.target.to_string());
        f.push(r.horizon_end.to_string());
        w.write_record(f)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_labeled_csv(path: &Path, rows: &[LabeledRecord]) -> Result<()> {
    write_labeled(std::fs::File::create(path)?, rows)
}

/// Reads `company_id,reference_date,special_status` rows.
pub fn read_prior_csv(path: &Path) -> Result<PriorStatus> {
    let mut prior = PriorStatus::new();
    for_each_row(std::fs::File::open(path)?, |row| {
        let id = row.required("company_id")?;
        let at: YearMonth = row.required("reference_date")?.parse()?;
        let status: SpecialStatus = row.raw("special_status").unwrap_or("none").parse()?;
        prior.insert(id, at, status);
        Ok(())
    })?;
    Ok(prior)
}

pub fn write_prior_csv(path: &Path, prior: &PriorStatus) -> Result<()> {
    let mut rows: Vec<(&str, YearMonth, SpecialStatus)> = prior.iter().collect();
    rows.sort();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["company_id", "reference_date", "special_status"])?;
    for (c, m, s) in rows {
        w.write_record([c.to_string(), m.to_string(), s.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_cells_default_to_zero_and_are_counted() {
        let csv = "company_id,reference_date,nrt_balance,nrt_used,legal_type\n\
                   a,2020-03,100,,DI\n\
                   b,2020-03,,,\n";
        let (rows, report) = read_snapshots(csv.as_bytes()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].nrt_balance, 100.0);
        assert_eq!(rows[0].legal_type, LegalType::DI);
        assert_eq!(rows[1].nrt_balance, 0.0);
        assert_eq!(report.missing["nrt_used"], 2);
        assert_eq!(report.missing["nrt_balance"], 1);
        assert_eq!(report.missing["legal_type"], 1);
        // absent columns count as missing on every row
        assert_eq!(report.missing["def_no"], 2);
    }

    #[test]
    fn negative_balance_rejected() {
        let csv = "company_id,reference_date,nrt_balance\na,2020-03,-5\n";
        assert!(read_snapshots(csv.as_bytes()).is_err());
    }

    #[test]
    fn labeled_round_trip() {
        let mut s = CompanySnapshot::empty("x", "2019-03".parse().unwrap());
        s.nrt_balance = 1234.5;
        s.sector_vector = [0.1, -0.2, 0.3, 0.0, 1e-3];
        s.protest_present = true;
        let rec = LabeledRecord::new(s, 1);
        let mut buf = Vec::new();
        write_labeled(&mut buf, std::slice::from_ref(&rec)).unwrap();
        let (back, _) = read_labeled(buf.as_slice()).unwrap();
        assert_eq!(back, vec![rec]);
    }
}
