//! CSV exports: one result row per run, and per-iteration training logs.

use std::fs::OpenOptions;
use std::path::Path;

use anyhow::{Context, Result};
use gsimage_core::trainer::LogRecord;
use serde::{Deserialize, Serialize};

/// One evaluated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub image_id: String,
    #[serde(rename = "M")]
    pub max_gaussians: usize,
    pub iterations: u32,
    pub variant: String,
    pub flags: String,
    pub psnr: f64,
    pub ms_ssim: f64,
    pub bpp: Option<f64>,
    pub encode_s: Option<f64>,
    pub decode_fps: Option<f64>,
}

/// `d3+caf`, `d3`, `caf` or `none`.
pub fn flags_label(densify: bool, caf: bool) -> String {
    match (densify, caf) {
        (true, true) => "d3+caf",
        (true, false) => "d3",
        (false, true) => "caf",
        (false, false) => "none",
    }
    .to_owned()
}

/// Appends rows, writing the header only when the file is new or empty.
pub fn append_rows(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let mut writer = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_rows(path: &Path) -> Result<Vec<ResultRow>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(reader.deserialize().collect::<std::result::Result<_, _>>()?)
}

#[derive(Serialize)]
struct LogRow {
    iteration: u32,
    loss: f64,
    psnr: f64,
    count: usize,
}

/// Writes a training history as CSV.
pub fn write_log(path: &Path, history: &[LogRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for r in history {
        writer.serialize(LogRow {
            iteration: r.iteration,
            loss: r.loss,
            psnr: r.psnr,
            count: r.count,
        })?;
    }
    writer.flush()?;
    Ok(())
}
