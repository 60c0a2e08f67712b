//! Run records and model artifacts.
//!
//! Records persist to CSV with Rust's shortest round-trip float formatting,
//! so write-then-read is lossless. Nested per-epoch metrics pack into one
//! cell: epochs separated by `;`, tasks within an epoch by `|`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MtlError, Result};
use crate::net::HydraSpec;

/// One training run: identity (config hash, seed, method, optimizer, lr),
/// its per-epoch validation trajectory, and the final test metrics used for
/// Δm/Pareto analysis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub seed: u64,
    pub method: String,
    pub optimizer: String,
    pub lr: f64,
    /// Early-stopping selection (index into the epoch vectors).
    pub best_epoch: usize,
    /// Per-epoch, per-task validation metrics.
    pub val_metrics: Vec<Vec<f64>>,
    /// Per-epoch validation Δm against the STL baseline; empty when no
    /// baseline applies (e.g. the STL runs themselves).
    pub val_delta_m: Vec<f64>,
    /// Per-task test metrics at the selected epoch.
    pub test_metrics: Vec<f64>,
    /// Orientation flag l_t per task: true = higher is better.
    pub higher_better: Vec<bool>,
}

fn join_f64(v: &[f64], sep: char) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(&sep.to_string())
}

fn split_f64(s: &str, sep: char) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(sep)
        .map(|p| {
            p.parse::<f64>().map_err(|_| MtlError::Parse {
                location: "record csv".into(),
                message: format!("bad float {p:?}"),
            })
        })
        .collect()
}

impl RunRecord {
    pub fn csv_header() -> &'static str {
        "config_hash,seed,method,optimizer,lr,best_epoch,val_metrics,val_delta_m,test_metrics,higher_better"
    }

    pub fn to_csv_row(&self) -> String {
        let val = self
            .val_metrics
            .iter()
            .map(|epoch| join_f64(epoch, '|'))
            .collect::<Vec<_>>()
            .join(";");
        let hb = self
            .higher_better
            .iter()
            .map(|&b| if b { "1" } else { "0" })
            .collect::<Vec<_>>()
            .join("|");
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.config_hash,
            self.seed,
            self.method,
            self.optimizer,
            self.lr,
            self.best_epoch,
            val,
            join_f64(&self.val_delta_m, ';'),
            join_f64(&self.test_metrics, '|'),
            hb
        )
    }

    pub fn from_csv_row(row: &str) -> Result<Self> {
        let parts: Vec<&str> = row.split(',').collect();
        if parts.len() != 10 {
            return Err(MtlError::Parse {
                location: "record csv".into(),
                message: format!("expected 10 fields, got {}", parts.len()),
            });
        }
        let bad = |what: &str| MtlError::Parse {
            location: "record csv".into(),
            message: format!("bad {what}"),
        };
        let val_metrics = if parts[6].is_empty() {
            Vec::new()
        } else {
            parts[6]
                .split(';')
                .map(|e| split_f64(e, '|'))
                .collect::<Result<Vec<_>>>()?
        };
        let higher_better = if parts[9].is_empty() {
            Vec::new()
        } else {
            parts[9]
                .split('|')
                .map(|p| match p {
                    "1" => Ok(true),
                    "0" => Ok(false),
                    _ => Err(bad("higher_better flag")),
                })
                .collect::<Result<Vec<_>>>()?
        };
        Ok(RunRecord {
            config_hash: parts[0].to_string(),
            seed: parts[1].parse().map_err(|_| bad("seed"))?,
            method: parts[2].to_string(),
            optimizer: parts[3].to_string(),
            lr: parts[4].parse().map_err(|_| bad("lr"))?,
            best_epoch: parts[5].parse().map_err(|_| bad("best_epoch"))?,
            val_metrics,
            val_delta_m: split_f64(parts[7], ';')?,
            test_metrics: split_f64(parts[8], '|')?,
            higher_better,
        })
    }
}

pub fn records_to_csv(records: &[RunRecord]) -> String {
    let mut out = String::from(RunRecord::csv_header());
    out.push('\n');
    for r in records {
        out.push_str(&r.to_csv_row());
        out.push('\n');
    }
    out
}

pub fn records_from_csv(text: &str) -> Result<Vec<RunRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == RunRecord::csv_header() => {}
        other => {
            return Err(MtlError::Parse {
                location: "record csv".into(),
                message: format!("bad header {other:?}"),
            })
        }
    }
    lines.filter(|l| !l.is_empty()).map(RunRecord::from_csv_row).collect()
}

/// A persisted trained model: enough to rebuild the net bit-for-bit and to
/// know what it was trained as.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    /// "mtl" or "stl".
    pub kind: String,
    /// STL artifacts carry the task they were trained on.
    pub task: Option<usize>,
    pub seed: u64,
    pub config_hash: String,
    pub method: String,
    pub optimizer: String,
    pub lr: f64,
    pub spec: HydraSpec,
    pub params: Vec<f64>,
    pub test_metrics: Vec<f64>,
    pub higher_better: Vec<bool>,
}

impl ModelArtifact {
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            MtlError::config(format!("missing model artifact {}: {e}", path.display()))
        })?;
        Ok(serde_json::from_str(&text)?)
    }
}
