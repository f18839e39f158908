//! Record files and summary tables.
//!
//! Shot records are line-delimited JSON. A file starts with a header object
//! (it carries a `format` key) followed by one record per line; further
//! header lines may follow when runs are appended. Summaries are CSV.

use std::io::{BufRead, Write};

use serde_json::Value;

use crate::criteria::{CriteriaReport, CriteriaValues, Evaluation};
use crate::error::{Error, Result};
use crate::experiment::{Dataset, DatasetHeader, RECORD_FORMAT};
use crate::sampler::ShotRecord;

pub fn write_dataset<W: Write>(mut w: W, dataset: &Dataset) -> Result<()> {
    serde_json::to_writer(&mut w, &dataset.header)?;
    w.write_all(b"\n")?;
    for r in &dataset.records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Records of one file, with every header seen in it.
#[derive(Clone, Debug, PartialEq)]
pub struct RecordFile {
    pub headers: Vec<DatasetHeader>,
    pub records: Vec<ShotRecord>,
}

impl RecordFile {
    /// Single dataset; refuses files whose headers disagree on the config
    /// hash unless `force` is set (the first header is kept then).
    pub fn into_dataset(self, force: bool) -> Result<Dataset> {
        let header = self
            .headers
            .first()
            .cloned()
            .ok_or_else(|| Error::Parse { line: 1, message: "missing header line".into() })?;
        if !force {
            if let Some(other) = self.headers.iter().find(|h| h.config_hash != header.config_hash) {
                return Err(Error::InvalidArgument(format!(
                    "records from different configurations ({}... and {}...); pass --force to analyze them together",
                    &header.config_hash[..header.config_hash.len().min(12)],
                    &other.config_hash[..other.config_hash.len().min(12)]
                )));
            }
            let mut ids: Vec<u64> = self.records.iter().map(|r| r.shot_id).collect();
            ids.sort_unstable();
            if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
                return Err(Error::InvalidArgument(format!("duplicate shot_id {}", w[0])));
            }
        }
        Ok(Dataset { header, records: self.records })
    }
}

pub fn read_records<R: BufRead>(reader: R) -> Result<RecordFile> {
    let mut headers = Vec::new();
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse { line: line_no, message };
        let value: Value = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if value.get("format").is_some() {
            let header: DatasetHeader = serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))?;
            if header.format != RECORD_FORMAT {
                return Err(parse_err(format!("unsupported format {:?}", header.format)));
            }
            headers.push(header);
        } else {
            if headers.is_empty() {
                return Err(parse_err("record before header line".into()));
            }
            let record: ShotRecord = serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))?;
            let counts = [record.n1a, record.n2a, record.n1b, record.n2b];
            if counts.iter().any(|c| !c.is_finite()) || !record.theta_b.is_finite() || !record.delta_t_s.is_finite() {
                return Err(parse_err("non-finite value".into()));
            }
            records.push(record);
        }
    }
    if headers.is_empty() {
        return Err(Error::IncompleteDataset("empty record file".into()));
    }
    Ok(RecordFile { headers, records })
}

const VALUE_COLUMNS: &str = "epr_a_to_b,epr_b_to_a,ent,ent_reused_gains,hei_a,hei_b,sx_a,sx_b,corr_z,corr_y";

fn value_cells(v: &CriteriaValues) -> String {
    [
        v.epr_a_to_b,
        v.epr_b_to_a,
        v.ent,
        v.ent_reused_gains,
        v.hei_a,
        v.hei_b,
        v.sx_a,
        v.sx_b,
        v.corr_z,
        v.corr_y,
    ]
    .iter()
    .map(|x| format!("{x}"))
    .collect::<Vec<_>>()
    .join(",")
}

fn gain_cells(e: &Evaluation) -> String {
    let a = e.gains_a_to_b;
    let b = e.gains_b_to_a;
    format!(
        "{},{},{},{},{},{},{},{},{}",
        a.g_z, a.g_y, b.g_z, b.g_y, a.g_dt, e.ent_gains.0, e.ent_gains.1, a.c_z, a.c_y
    )
}

/// One row per block, then `average`, `single_block` and the bootstrap
/// error rows.
pub fn write_report_csv<W: Write>(mut w: W, report: &CriteriaReport) -> Result<()> {
    writeln!(
        w,
        "row,{VALUE_COLUMNS},g_z_ab,g_y_ab,g_z_ba,g_y_ba,g_dt,g_z_ent,g_y_ent,c_z_ab,c_y_ab"
    )?;
    let empty_gains = ",,,,,,,,";
    for (i, e) in report.blocks.per_block.iter().enumerate() {
        writeln!(w, "block_{i},{},{}", value_cells(&e.values), gain_cells(e))?;
    }
    if let Some(avg) = &report.blocks.average {
        writeln!(w, "average,{},{empty_gains}", value_cells(avg))?;
    }
    let single = &report.blocks.single_block;
    writeln!(w, "single_block,{},{}", value_cells(&single.values), gain_cells(single))?;
    if let Some(err) = &report.errors {
        writeln!(w, "average_se,{},{empty_gains}", value_cells(&err.average))?;
        writeln!(w, "single_block_se,{},{empty_gains}", value_cells(&err.single_block))?;
    }
    w.flush()?;
    Ok(())
}

/// One row of a theta sweep.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SweepRow {
    pub theta: f64,
    pub values: CriteriaValues,
    pub errors: CriteriaValues,
}

pub fn write_sweep_csv<W: Write>(mut w: W, rows: &[SweepRow]) -> Result<()> {
    writeln!(w, "theta,ent,ent_se,epr_b_to_a,epr_b_to_a_se,epr_a_to_b,epr_a_to_b_se,hei_a,hei_a_se,hei_b,hei_b_se,corr_z,corr_y")?;
    for r in rows {
        let (v, e) = (&r.values, &r.errors);
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.theta, v.ent, e.ent, v.epr_b_to_a, e.epr_b_to_a, v.epr_a_to_b, e.epr_a_to_b, v.hei_a, e.hei_a, v.hei_b, e.hei_b, v.corr_z, v.corr_y
        )?;
    }
    w.flush()?;
    Ok(())
}
