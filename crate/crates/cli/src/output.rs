//! CSV and sidecar emission.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::Config;
use crate::experiments::Row;
use crate::CliError;

pub fn write_rows(path: &Path, header: &[String], rows: &[Row]) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::Io(path.to_path_buf(), e))?;
    let mut w = csv::WriterBuilder::new().from_writer(BufWriter::new(file));
    let io = |e: csv::Error| CliError::Csv(path.to_path_buf(), e);
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(row.cells.iter().map(|c| c.render())).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Io(path.to_path_buf(), e))
}

#[derive(Debug, Serialize)]
pub struct Sidecar<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub experiment: &'a str,
    pub config: &'a Config,
    pub columns: &'a [String],
    pub rows: usize,
    pub failed_rows: usize,
    pub started_unix_s: f64,
    pub wall_clock_s: f64,
    pub jobs: usize,
}

/// `out.csv` → `out.meta.json`.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta.json")
}

pub fn write_sidecar(csv: &Path, meta: &Sidecar<'_>) -> Result<PathBuf, CliError> {
    let path = sidecar_path(csv);
    let file = File::create(&path).map_err(|e| CliError::Io(path.clone(), e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, meta).map_err(|e| CliError::Io(path.clone(), e.into()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| CliError::Io(path.clone(), e))?;
    Ok(path)
}
