//! Company panel data: the (company, year, revenue, profit) records, their
//! ingestion from delimited text, and per-year cross-sectional means.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompanyYearRecord {
    pub company_id: String,
    pub year: i32,
    pub revenue: f64,
    /// May be zero or negative.
    pub profit: f64,
}

/// Immutable, validated panel. Records are kept sorted by `(company_id, year)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    records: Vec<CompanyYearRecord>,
    year_min: i32,
    year_max: i32,
    unit_label: String,
}

impl Panel {
    pub fn new(
        mut records: Vec<CompanyYearRecord>,
        year_min: i32,
        year_max: i32,
        unit_label: impl Into<String>,
    ) -> Result<Self> {
        if year_min > year_max {
            return Err(Error::InvalidPanel(format!(
                "year_min {year_min} exceeds year_max {year_max}"
            )));
        }
        records.sort_by(|a, b| a.company_id.cmp(&b.company_id).then(a.year.cmp(&b.year)));
        for w in records.windows(2) {
            if w[0].company_id == w[1].company_id && w[0].year == w[1].year {
                return Err(Error::InvalidPanel(format!(
                    "duplicate record ({}, {})",
                    w[1].company_id, w[1].year
                )));
            }
        }
        for r in &records {
            if !(r.revenue > 0.0) || !r.revenue.is_finite() || !r.profit.is_finite() {
                return Err(Error::InvalidPanel(format!(
                    "record ({}, {}) has invalid revenue or profit",
                    r.company_id, r.year
                )));
            }
            if r.year < year_min || r.year > year_max {
                return Err(Error::InvalidPanel(format!(
                    "record ({}, {}) outside [{year_min}, {year_max}]",
                    r.company_id, r.year
                )));
            }
        }
        let years: BTreeSet<i32> = records.iter().map(|r| r.year).collect();
        if years.len() < 2 {
            return Err(Error::InsufficientData {
                what: "panel years",
                needed: 2,
                got: years.len(),
            });
        }
        Ok(Self {
            records,
            year_min,
            year_max,
            unit_label: unit_label.into(),
        })
    }

    pub fn records(&self) -> &[CompanyYearRecord] {
        &self.records
    }

    pub fn year_min(&self) -> i32 {
        self.year_min
    }

    pub fn year_max(&self) -> i32 {
        self.year_max
    }

    pub fn unit_label(&self) -> &str {
        &self.unit_label
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct years present in the records, ascending.
    pub fn years(&self) -> Vec<i32> {
        let set: BTreeSet<i32> = self.records.iter().map(|r| r.year).collect();
        set.into_iter().collect()
    }

    pub fn n_companies(&self) -> usize {
        let set: BTreeSet<&str> = self.records.iter().map(|r| r.company_id.as_str()).collect();
        set.len()
    }

    /// Canonical serialization: header `company,year,revenue,profit`, records in
    /// canonical order, floats in shortest round-trip form.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["company", "year", "revenue", "profit"])?;
        for r in &self.records {
            w.write_record([
                r.company_id.clone(),
                r.year.to_string(),
                r.revenue.to_string(),
                r.profit.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn metadata(&self, report: &RejectionReport) -> PanelMetadata {
        PanelMetadata {
            unit_label: self.unit_label.clone(),
            year_min: self.year_min,
            year_max: self.year_max,
            n_records: self.records.len(),
            n_companies: self.n_companies(),
            rejections: report.counts(),
        }
    }
}

/// Structured sidecar written next to a serialized panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelMetadata {
    pub unit_label: String,
    pub year_min: i32,
    pub year_max: i32,
    pub n_records: usize,
    pub n_companies: usize,
    pub rejections: BTreeMap<RejectReason, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    pub delimiter: u8,
    pub company_column: String,
    pub year_column: String,
    pub revenue_column: String,
    pub profit_column: String,
    pub unit_label: String,
    /// Declared year range; derived from the retained rows when absent.
    pub year_range: Option<(i32, i32)>,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            delimiter: b',',
            company_column: "company".into(),
            year_column: "year".into(),
            revenue_column: "revenue".into(),
            profit_column: "profit".into(),
            unit_label: "billions USD".into(),
            year_range: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    MissingField,
    EmptyCompany,
    UnparseableYear,
    UnparseableRevenue,
    UnparseableProfit,
    MissingProfit,
    NonpositiveRevenue,
    YearOutOfRange,
    DuplicateKey,
}

impl RejectReason {
    pub fn code(self) -> &'static str {
        match self {
            RejectReason::MissingField => "missing_field",
            RejectReason::EmptyCompany => "empty_company",
            RejectReason::UnparseableYear => "unparseable_year",
            RejectReason::UnparseableRevenue => "unparseable_revenue",
            RejectReason::UnparseableProfit => "unparseable_profit",
            RejectReason::MissingProfit => "missing_profit",
            RejectReason::NonpositiveRevenue => "nonpositive_revenue",
            RejectReason::YearOutOfRange => "year_out_of_range",
            RejectReason::DuplicateKey => "duplicate_key",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedRow {
    /// 1-based line number in the source, header included.
    pub line: u64,
    pub reason: RejectReason,
    pub raw: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RejectionReport {
    pub rejected: Vec<RejectedRow>,
}

impl RejectionReport {
    pub fn counts(&self) -> BTreeMap<RejectReason, usize> {
        let mut m = BTreeMap::new();
        for r in &self.rejected {
            *m.entry(r.reason).or_insert(0) += 1;
        }
        m
    }

    pub fn len(&self) -> usize {
        self.rejected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rejected.is_empty()
    }
}

fn find_column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim().eq_ignore_ascii_case(name.trim()))
        .ok_or_else(|| Error::MalformedHeader(format!("no column named `{name}`")))
}

fn parse_number(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Reads a delimited panel. Bad rows are dropped and reported; only a missing
/// or malformed header is fatal.
pub fn ingest<R: Read>(source: R, config: &IngestConfig) -> Result<(Panel, RejectionReport)> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(config.delimiter)
        .has_headers(true)
        .flexible(true)
        .from_reader(source);
    let headers = reader
        .headers()
        .map_err(|e| Error::MalformedHeader(e.to_string()))?
        .clone();
    if headers.is_empty() || headers.iter().all(|h| h.trim().is_empty()) {
        return Err(Error::MalformedHeader("empty header row".into()));
    }
    let ci = find_column(&headers, &config.company_column)?;
    let yi = find_column(&headers, &config.year_column)?;
    let ri = find_column(&headers, &config.revenue_column)?;
    let pi = find_column(&headers, &config.profit_column)?;

    let mut report = RejectionReport::default();
    let mut seen: BTreeSet<(String, i32)> = BTreeSet::new();
    let mut records = Vec::new();

    for row in reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let raw = row.iter().collect::<Vec<_>>().join(",");
        let mut reject = |reason| {
            report.rejected.push(RejectedRow {
                line,
                reason,
                raw: raw.clone(),
            })
        };

        let (Some(company), Some(year), Some(revenue), Some(profit)) =
            (row.get(ci), row.get(yi), row.get(ri), row.get(pi))
        else {
            reject(RejectReason::MissingField);
            continue;
        };
        let company = company.trim();
        if company.is_empty() {
            reject(RejectReason::EmptyCompany);
            continue;
        }
        let Ok(year) = year.trim().parse::<i32>() else {
            reject(RejectReason::UnparseableYear);
            continue;
        };
        let Some(revenue) = parse_number(revenue) else {
            reject(RejectReason::UnparseableRevenue);
            continue;
        };
        if profit.trim().is_empty() {
            reject(RejectReason::MissingProfit);
            continue;
        }
        let Some(profit) = parse_number(profit) else {
            reject(RejectReason::UnparseableProfit);
            continue;
        };
        if revenue <= 0.0 {
            reject(RejectReason::NonpositiveRevenue);
            continue;
        }
        if let Some((lo, hi)) = config.year_range {
            if year < lo || year > hi {
                reject(RejectReason::YearOutOfRange);
                continue;
            }
        }
        if !seen.insert((company.to_string(), year)) {
            reject(RejectReason::DuplicateKey);
            continue;
        }
        records.push(CompanyYearRecord {
            company_id: company.to_string(),
            year,
            revenue,
            profit,
        });
    }

    let (year_min, year_max) = match config.year_range {
        Some(range) => range,
        None => {
            let lo = records.iter().map(|r| r.year).min();
            let hi = records.iter().map(|r| r.year).max();
            match (lo, hi) {
                (Some(lo), Some(hi)) => (lo, hi),
                _ => {
                    return Err(Error::InsufficientData {
                        what: "panel rows",
                        needed: 1,
                        got: 0,
                    })
                }
            }
        }
    };
    let panel = Panel::new(records, year_min, year_max, config.unit_label.clone())?;
    Ok((panel, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YearlyMean {
    pub year: i32,
    /// Mean revenue over the companies present that year.
    pub r0: f64,
    /// Mean profit over the companies present that year.
    pub p0: f64,
    pub n: usize,
}

pub fn yearly_means(panel: &Panel) -> Vec<YearlyMean> {
    let mut acc: BTreeMap<i32, (f64, f64, usize)> = BTreeMap::new();
    for r in panel.records() {
        let e = acc.entry(r.year).or_insert((0.0, 0.0, 0));
        e.0 += r.revenue;
        e.1 += r.profit;
        e.2 += 1;
    }
    acc.into_iter()
        .map(|(year, (rs, ps, n))| YearlyMean {
            year,
            r0: rs / n as f64,
            p0: ps / n as f64,
            n,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ingest_str(s: &str) -> Result<(Panel, RejectionReport)> {
        ingest(s.as_bytes(), &IngestConfig::default())
    }

    #[test]
    fn well_formed_row_is_retained() {
        let (panel, report) =
            ingest_str("company,year,revenue,profit\nACME,1960,2.5,0.1\nACME,1961,3,0.2\n").unwrap();
        assert!(report.is_empty());
        assert_eq!(
            panel.records()[0],
            CompanyYearRecord {
                company_id: "ACME".into(),
                year: 1960,
                revenue: 2.5,
                profit: 0.1
            }
        );
    }

    #[test]
    fn nonpositive_revenue_is_rejected() {
        let (panel, report) = ingest_str(
            "company,year,revenue,profit\nACME,1960,-1.0,0.1\nB,1960,1,0\nB,1961,1,0\n",
        )
        .unwrap();
        assert_eq!(panel.len(), 2);
        assert_eq!(report.rejected[0].reason, RejectReason::NonpositiveRevenue);
        assert_eq!(report.rejected[0].reason.code(), "nonpositive_revenue");
        assert_eq!(report.rejected[0].line, 2);
    }

    #[test]
    fn duplicate_key_rejects_later_row() {
        let (panel, report) = ingest_str(
            "company,year,revenue,profit\nACME,1960,2.5,0.1\nACME,1960,9,9\nACME,1961,1,1\n",
        )
        .unwrap();
        assert_eq!(panel.records()[0].revenue, 2.5);
        assert_eq!(report.len(), 1);
        assert_eq!(report.rejected[0].reason, RejectReason::DuplicateKey);
        assert_eq!(report.rejected[0].line, 3);
    }

    #[test]
    fn zero_profit_is_kept_and_missing_profit_rejected() {
        let (panel, report) = ingest_str(
            "company,year,revenue,profit\nA,1960,1,0\nA,1961,1,\nA,1962,1,x\nB,1961,2,1\n",
        )
        .unwrap();
        assert_eq!(panel.len(), 2);
        let counts = report.counts();
        assert_eq!(counts[&RejectReason::MissingProfit], 1);
        assert_eq!(counts[&RejectReason::UnparseableProfit], 1);
    }

    #[test]
    fn malformed_header_is_fatal() {
        assert!(matches!(
            ingest_str("name,year,revenue,profit\nA,1960,1,1\n"),
            Err(Error::MalformedHeader(_))
        ));
        assert!(matches!(ingest_str(""), Err(Error::MalformedHeader(_))));
    }

    #[test]
    fn custom_columns_and_delimiter() {
        let cfg = IngestConfig {
            delimiter: b';',
            company_column: "Name".into(),
            year_column: "FY".into(),
            revenue_column: "Sales".into(),
            profit_column: "Earnings".into(),
            ..IngestConfig::default()
        };
        let src = "Earnings;FY;Name;Sales\n0.5;2000;X;10\n0.7;2001;X;11\n";
        let (panel, _) = ingest(src.as_bytes(), &cfg).unwrap();
        assert_eq!(panel.records()[1].revenue, 11.0);
        assert_eq!(panel.records()[1].profit, 0.7);
    }

    #[test]
    fn declared_year_range_rejects_outside_rows() {
        let cfg = IngestConfig {
            year_range: Some((1960, 1961)),
            ..IngestConfig::default()
        };
        let src = "company,year,revenue,profit\nA,1959,1,1\nA,1960,1,1\nA,1961,1,1\n";
        let (panel, report) = ingest(src.as_bytes(), &cfg).unwrap();
        assert_eq!(panel.len(), 2);
        assert_eq!(report.rejected[0].reason, RejectReason::YearOutOfRange);
    }

    #[test]
    fn single_year_panel_is_invalid() {
        assert!(ingest_str("company,year,revenue,profit\nA,1960,1,1\nB,1960,1,1\n").is_err());
        assert!(ingest_str("company,year,revenue,profit\n").is_err());
    }

    #[test]
    fn yearly_means_two_point() {
        let (panel, _) = ingest_str(
            "company,year,revenue,profit\nA,1960,2,0.1\nB,1960,4,0.3\nA,1961,5,0.5\n",
        )
        .unwrap();
        let m = yearly_means(&panel);
        assert_eq!(m[0].year, 1960);
        assert!((m[0].r0 - 3.0).abs() < 1e-15);
        assert!((m[0].p0 - 0.2).abs() < 1e-15);
        assert_eq!(m[0].n, 2);
        assert_eq!((m[1].r0, m[1].p0, m[1].n), (5.0, 0.5, 1));
    }
}
