//! Result tables and their CSV files.
//!
//! Negatives for each method are pooled over all bands: H0 scores never see
//! an injected source, so every band's clean replicates sample the same
//! distribution.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::roc::{compute_roc, pd_at_fpr, PdAtFpr, RocCurve};
use super::stats::{localization_summary, LocSummary};
use super::{Method, ReplicateRecord};
use crate::error::{Error, Result};

pub const REPLICATES_CSV: &str = "replicates.csv";
pub const PD_TABLE_CSV: &str = "pd_table.csv";
pub const LOCERR_CSV: &str = "locerr.csv";

/// One line of `replicates.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRow {
    pub band_lo: f64,
    pub band_hi: f64,
    pub rep: usize,
    pub method: Method,
    pub score_h1: f64,
    pub score_h0: f64,
    pub loc_err_m: f64,
    pub along_m: f64,
    pub offset_m: f64,
    pub intensity_uci: f64,
}

pub fn rows_from_records(records: &[ReplicateRecord]) -> Vec<ReplicateRow> {
    records
        .iter()
        .flat_map(|r| {
            r.outcomes.iter().map(move |o| ReplicateRow {
                band_lo: r.band.0,
                band_hi: r.band.1,
                rep: r.rep,
                method: o.method,
                score_h1: o.score_h1,
                score_h0: o.score_h0,
                loc_err_m: o.loc_err,
                along_m: r.placement.along,
                offset_m: r.placement.offset,
                intensity_uci: r.placement.intensity_uci,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportCell {
    pub method: Method,
    pub band: (f64, f64),
    pub roc: RocCurve,
    pub pd: PdAtFpr,
    /// Over H1 replicates alarming at the `pd` threshold.
    pub locerr: Option<LocSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub fpr_target: f64,
    pub bands: Vec<(f64, f64)>,
    pub methods: Vec<Method>,
    /// Method-major, bands ascending.
    pub cells: Vec<ReportCell>,
}

impl Report {
    pub fn cell(&self, method: Method, band: (f64, f64)) -> Option<&ReportCell> {
        self.cells.iter().find(|c| c.method == method && c.band == band)
    }

    /// Detection probabilities of one method in band order.
    pub fn pd_row(&self, method: Method) -> Vec<f64> {
        self.bands
            .iter()
            .filter_map(|&b| self.cell(method, b).map(|c| c.pd.pd))
            .collect()
    }

    /// Methods as rows, bands as columns, three decimals.
    pub fn pd_table_text(&self) -> String {
        let mut out = String::from("method");
        for (lo, hi) in &self.bands {
            out.push_str(&format!("\t{lo}-{hi}"));
        }
        out.push('\n');
        for &m in &self.methods {
            out.push_str(m.label());
            for &b in &self.bands {
                match self.cell(m, b) {
                    Some(c) => out.push_str(&format!("\t{:.3}", c.pd.pd)),
                    None => out.push_str("\t-"),
                }
            }
            out.push('\n');
        }
        out
    }
}

pub fn build_report(rows: &[ReplicateRow], fpr_target: f64) -> Result<Report> {
    if rows.is_empty() {
        return Err(Error::data("no replicate rows to report"));
    }
    let mut methods: Vec<Method> = rows.iter().map(|r| r.method).collect();
    methods.sort();
    methods.dedup();
    let mut bands: Vec<(f64, f64)> = rows.iter().map(|r| (r.band_lo, r.band_hi)).collect();
    bands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    bands.dedup();

    let mut cells = Vec::new();
    for &method in &methods {
        let of_method: Vec<&ReplicateRow> = rows.iter().filter(|r| r.method == method).collect();
        let h0: Vec<f64> = of_method.iter().map(|r| r.score_h0).collect();
        for &band in &bands {
            let in_band: Vec<&ReplicateRow> = of_method
                .iter()
                .copied()
                .filter(|r| (r.band_lo, r.band_hi) == band)
                .collect();
            if in_band.is_empty() {
                continue;
            }
            let h1: Vec<f64> = in_band.iter().map(|r| r.score_h1).collect();
            let roc = compute_roc(&h1, &h0)?;
            let pd = pd_at_fpr(&roc, fpr_target);
            let detected: Vec<f64> = in_band
                .iter()
                .filter(|r| r.score_h1 >= pd.threshold)
                .map(|r| r.loc_err_m)
                .collect();
            cells.push(ReportCell {
                method,
                band,
                roc,
                pd,
                locerr: localization_summary(&detected),
            });
        }
    }
    Ok(Report {
        fpr_target,
        bands,
        methods,
        cells,
    })
}

pub fn roc_file_name(band: (f64, f64), method: Method) -> String {
    format!("roc_{}-{}_{}.csv", band.0, band.1, method.label())
}

fn write_records(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e))?;
    w.write_record(header).map_err(|e| Error::format(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| Error::format(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_replicates(path: &Path, rows: &[ReplicateRow]) -> Result<()> {
    write_records(
        path,
        &[
            "band_lo", "band_hi", "rep", "method", "score_h1", "score_h0", "loc_err_m", "along_m",
            "offset_m", "intensity_uci",
        ],
        rows.iter().map(|r| {
            vec![
                r.band_lo.to_string(),
                r.band_hi.to_string(),
                r.rep.to_string(),
                r.method.label().to_string(),
                r.score_h1.to_string(),
                r.score_h0.to_string(),
                r.loc_err_m.to_string(),
                r.along_m.to_string(),
                r.offset_m.to_string(),
                r.intensity_uci.to_string(),
            ]
        }),
    )
}

pub fn read_replicates(path: &Path) -> Result<Vec<ReplicateRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<ReplicateRow>, _>>()
        .map_err(|e| Error::format(path, e))
}

/// Write the ROC, Pd and localization tables into `dir`; returns the files written.
pub fn write_report(dir: &Path, report: &Report) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for cell in &report.cells {
        let path = dir.join(roc_file_name(cell.band, cell.method));
        write_records(
            &path,
            &["threshold", "fpr", "tpr"],
            cell.roc
                .points
                .iter()
                .map(|p| vec![p.threshold.to_string(), p.fpr.to_string(), p.tpr.to_string()]),
        )?;
        written.push(path);
    }
    let path = dir.join(PD_TABLE_CSV);
    write_records(
        &path,
        &["method", "band_lo", "band_hi", "pd_at_fpr"],
        report.cells.iter().map(|c| {
            vec![
                c.method.label().to_string(),
                c.band.0.to_string(),
                c.band.1.to_string(),
                c.pd.pd.to_string(),
            ]
        }),
    )?;
    written.push(path);
    let path = dir.join(LOCERR_CSV);
    write_records(
        &path,
        &["method", "band_lo", "band_hi", "min", "q1", "median", "q3", "max", "n"],
        report.cells.iter().map(|c| {
            let mut row = vec![c.method.label().to_string(), c.band.0.to_string(), c.band.1.to_string()];
            match c.locerr {
                Some(s) => {
                    row.extend([s.min, s.q1, s.median, s.q3, s.max].iter().map(|v| v.to_string()));
                    row.push(s.n.to_string());
                }
                None => {
                    row.extend(std::iter::repeat_n(String::new(), 5));
                    row.push("0".to_string());
                }
            }
            row
        }),
    )?;
    written.push(path);
    Ok(written)
}

/// `replicates.csv` plus every summary table.
pub fn write_results(dir: &Path, rows: &[ReplicateRow], report: &Report) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(REPLICATES_CSV);
    write_replicates(&path, rows)?;
    let mut written = vec![path];
    written.extend(write_report(dir, report)?);
    Ok(written)
}
