//! Line-delimited training metrics.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::objective::LossBundle;
use crate::Result;

/// One structured log line per update.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub update: u64,
    pub frames_per_task: u64,
    pub beta: f64,
    pub lambda_h: f64,
    pub losses: LossBundle,
    /// Windowed mean episode return per task; absent until the first episode
    /// of that task completes.
    pub task_returns: Vec<Option<f64>>,
    pub mean_return: Option<f64>,
    /// Greedy evaluation return (test-mode resets), when evaluation ran this
    /// update.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_return: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_success: Option<f64>,
}

pub fn write_jsonl(records: &[MetricsRecord], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        let line = serde_json::to_string(r)
            .map_err(|e| crate::Error::format(format!("metrics serialization failed: {e}")))?;
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l)
                .map_err(|e| crate::Error::format(format!("invalid metrics line: {e}")))
        })
        .collect()
}
