//! Farm CSV files and mask exports.
//!
//! A farm file has the header `power,speed,direction,temperature,pressure,density`
//! (column order free, extra columns ignored) and one row per 15-minute step.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use ztfed_core::data::{HybridMask, WindDataset, FEATURES, FEATURE_COUNT};

use crate::error::{AppError, AppResult};

pub type Row = [f64; FEATURE_COUNT];

/// Parse rows from CSV text. Errors carry 1-based line numbers; `source`
/// names the input in messages.
pub fn read_rows<R: Read>(reader: R, source: &Path) -> AppResult<Vec<Row>> {
    let bad = |reason: String| AppError::Input { path: source.to_path_buf(), reason };
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(|e| bad(format!("unreadable header: {e}")))?.clone();
    let missing: Vec<&str> = FEATURES.iter().copied().filter(|f| !header.iter().any(|h| h == *f)).collect();
    if !missing.is_empty() {
        return Err(bad(format!("missing column(s): {}", missing.join(", "))));
    }
    let cols: Vec<usize> = FEATURES.iter().map(|f| header.iter().position(|h| h == *f).unwrap()).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(format!("malformed record: {e}")))?;
        let line = rec.position().map_or(0, |p| p.line());
        let mut row = [0.0; FEATURE_COUNT];
        for (k, &c) in cols.iter().enumerate() {
            let field = rec.get(c).unwrap_or("");
            row[k] = field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(format!("line {line}: unparseable {} value {field:?}", FEATURES[k])))?;
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Load one farm and cut it into windows of length `t`.
pub fn load_csv(path: &Path, farm_id: usize, t: usize) -> AppResult<WindDataset> {
    let file = File::open(path).map_err(AppError::path(path))?;
    let rows = read_rows(file, path)?;
    if rows.len() < t {
        return Err(AppError::Input {
            path: path.to_path_buf(),
            reason: format!("{} data rows, need at least one window of {t}", rows.len()),
        });
    }
    Ok(WindDataset::from_rows(farm_id, &rows, t)?)
}

pub fn write_rows<W: Write>(writer: W, rows: &[Row]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(FEATURES)?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Write a farm's raw (denormalized) rows.
pub fn write_csv(path: &Path, ds: &WindDataset) -> AppResult<()> {
    let file = File::create(path).map_err(AppError::path(path))?;
    write_rows(BufWriter::new(file), &ds.raw_rows()).map_err(|e| AppError::Runtime(format!("{}: {e}", path.display())))
}

/// Masks as JSON lines, one array of 0/1 per window.
pub fn write_masks<W: Write>(mut writer: W, masks: &[&HybridMask]) -> std::io::Result<()> {
    for m in masks {
        serde_json::to_writer(&mut writer, &m.m)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}
