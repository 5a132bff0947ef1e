//! Metrics CSV: one header row, then one row per evaluation.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use mars_core::policy::Features;
use mars_core::trainer::{EvalSummary, MetricsRow};

use crate::error::{RunError, RunResult};

pub const METRICS: &str = "metrics.csv";
pub const SWEEP: &str = "sweep.csv";

pub struct MetricsWriter {
    path: PathBuf,
    file: File,
    features: Features,
}

impl MetricsWriter {
    /// Opens `path` for appending, writing the header if the file is new or
    /// empty.
    pub fn open(path: &Path, features: Features) -> RunResult<Self> {
        let mut file =
            OpenOptions::new().create(true).append(true).open(path).map_err(|e| RunError::io(path, e))?;
        let len = file.metadata().map_err(|e| RunError::io(path, e))?.len();
        if len == 0 {
            writeln!(file, "{}", MetricsRow::header(features).join(",")).map_err(|e| RunError::io(path, e))?;
        }
        Ok(Self { path: path.to_path_buf(), file, features })
    }

    pub fn write(&mut self, row: &MetricsRow) -> RunResult<()> {
        writeln!(self.file, "{}", row.cells(self.features).join(",")).map_err(|e| RunError::io(&self.path, e))?;
        self.file.flush().map_err(|e| RunError::io(&self.path, e))
    }
}

pub const SWEEP_HEADER: &str = "m_groups,episodes,test_return_mean,test_return_std,capture_rate";

pub fn sweep_csv(rows: &[EvalSummary]) -> String {
    let mut s = String::from(SWEEP_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!("{},{},{},{},{}\n", r.m_groups, r.episodes, r.return_mean, r.return_std, r.capture_rate));
    }
    s
}
