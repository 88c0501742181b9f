// SPDX-License-Identifier: MIT OR Apache-2.0

//! CSV ingestion. A header row is required. Streams carry either a `score`
//! column or feature columns `x1..xd`; training files carry `x1..xd` and `y`.

use std::fs::File;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use lsdetect::LabeledSample;

/// What each data row of a stream contributes.
#[derive(Debug, Clone, PartialEq)]
pub enum StreamRows {
    Scores(Vec<f64>),
    Features(Vec<Vec<f64>>),
}

fn open(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

/// Indices of `x1, x2, ...` in header order, stopping at the first gap.
fn feature_columns(headers: &csv::StringRecord) -> Vec<usize> {
    (1..)
        .map_while(|j| headers.iter().position(|h| h.trim() == format!("x{j}")))
        .collect()
}

fn parse_field(record: &csv::StringRecord, idx: usize, name: &str, row: usize) -> Result<f64> {
    let raw = record.get(idx).ok_or_else(|| anyhow!("row {row}: missing column `{name}`"))?.trim();
    raw.parse::<f64>().map_err(|_| anyhow!("row {row}: column `{name}`: invalid number `{raw}`"))
}

fn records(reader: &mut csv::Reader<File>) -> impl Iterator<Item = (usize, Result<csv::StringRecord>)> + '_ {
    reader.records().enumerate().map(|(i, r)| {
        let row = i + 1;
        (row, r.map_err(|e| anyhow!("row {row}: malformed row: {e}")))
    })
}

/// Reads a stream file. Scores are range-checked here so that the error names
/// the offending row.
pub fn read_stream(path: &Path) -> Result<StreamRows> {
    let mut reader = open(path)?;
    let headers = reader.headers().context("cannot read header row")?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].trim().is_empty()) {
        return Ok(StreamRows::Scores(Vec::new()));
    }
    if let Some(idx) = headers.iter().position(|h| h.trim() == "score") {
        let mut out = Vec::new();
        for (row, rec) in records(&mut reader) {
            let s = parse_field(&rec?, idx, "score", row)?;
            if !(0.0..=1.0).contains(&s) {
                bail!("row {row}: score out of range: {s}");
            }
            out.push(s);
        }
        return Ok(StreamRows::Scores(out));
    }
    let cols = feature_columns(&headers);
    if cols.is_empty() {
        bail!("header must contain a `score` column or feature columns x1..xd");
    }
    let mut out = Vec::new();
    for (row, rec) in records(&mut reader) {
        let rec = rec?;
        let x = cols
            .iter()
            .enumerate()
            .map(|(j, &c)| parse_field(&rec, c, &format!("x{}", j + 1), row))
            .collect::<Result<Vec<_>>>()?;
        out.push(x);
    }
    Ok(StreamRows::Features(out))
}

/// Reads a labeled training file with columns `x1..xd` and `y`.
pub fn read_training(path: &Path) -> Result<Vec<LabeledSample>> {
    let mut reader = open(path)?;
    let headers = reader.headers().context("cannot read header row")?.clone();
    let cols = feature_columns(&headers);
    let y_idx = headers.iter().position(|h| h.trim() == "y");
    let (true, Some(y_idx)) = (!cols.is_empty(), y_idx) else {
        bail!("training file {} needs columns x1..xd and y", path.display());
    };
    let mut out = Vec::new();
    for (row, rec) in records(&mut reader) {
        let rec = rec?;
        let x = cols
            .iter()
            .enumerate()
            .map(|(j, &c)| parse_field(&rec, c, &format!("x{}", j + 1), row))
            .collect::<Result<Vec<_>>>()?;
        let y = match rec.get(y_idx).map(str::trim) {
            Some("0") => 0,
            Some("1") => 1,
            other => bail!("row {row}: label must be 0 or 1, got {:?}", other.unwrap_or("")),
        };
        out.push(LabeledSample::new(x, y));
    }
    if out.is_empty() {
        bail!("training file {} has no rows", path.display());
    }
    Ok(out)
}
