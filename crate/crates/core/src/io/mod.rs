//! Files on disk: datasets, images, point clouds, checkpoints, configs and
//! metrics logs.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod ply;
pub mod png;

use std::io::Write;
use std::path::Path;

use crate::error::Result;
use crate::losses::LossBreakdown;

/// Write to a sibling temporary file, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Append-only metrics log with one [`LossBreakdown`] row per call.
pub struct MetricsCsv<W: Write> {
    out: W,
}

impl<W: Write> MetricsCsv<W> {
    pub fn new(mut out: W) -> Result<Self> {
        writeln!(out, "{}", LossBreakdown::csv_header())?;
        Ok(Self { out })
    }

    pub fn record(&mut self, step: u64, loss: &LossBreakdown) -> Result<()> {
        writeln!(self.out, "{}", loss.csv_row(step))?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}
