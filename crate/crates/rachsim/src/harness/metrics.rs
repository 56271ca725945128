//! Metric rows, the stable CSV schema, and the JSON run summary.
//!
//! Floats are rendered with 6 significant digits and byte-deterministic
//! output; the accuracy column is empty for regression tasks.

use std::fs;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("writing {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing metrics: {0}")]
    Parse(String),
}

/// One output row per frame: learning metrics plus channel accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMetrics {
    pub frame: usize,
    pub loss: f64,
    pub accuracy: Option<f64>,
    pub active_users: usize,
    pub received_users: usize,
    pub success_slots: usize,
    pub collision_slots: usize,
    pub idle_slots: usize,
    /// Mean over all users of `||g + m||_2` for this frame.
    pub mean_local_norm: f64,
    /// Norm of this frame's aggregated update (0 when nothing was received).
    pub global_grad_norm: f64,
}

/// A frame row tagged with its run context.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub seed: u64,
    pub policy: String,
    pub slots: usize,
    pub gamma: f64,
    pub metrics: FrameMetrics,
}

pub const CSV_HEADER: &str = "frame,seed,policy,K,gamma,loss,accuracy,active_users,received_users,success_slots,collision_slots,idle_slots,mean_local_norm,global_grad_norm";

/// Format with 6 significant digits, fixed or scientific notation as
/// magnitude requires, trailing zeros trimmed (printf `%.6g` behavior).
pub fn fmt_g6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".to_string()
        } else if x > 0.0 {
            "inf".to_string()
        } else {
            "-inf".to_string()
        };
    }
    let sci = format!("{:.5e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("exponent");
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim_trailing_zeros(format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_trailing_zeros(mantissa.to_string()))
    }
}

fn trim_trailing_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn render_row(row: &MetricsRow) -> String {
    let m = &row.metrics;
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        m.frame,
        row.seed,
        row.policy,
        row.slots,
        fmt_g6(row.gamma),
        fmt_g6(m.loss),
        m.accuracy.map(fmt_g6).unwrap_or_default(),
        m.active_users,
        m.received_users,
        m.success_slots,
        m.collision_slots,
        m.idle_slots,
        fmt_g6(m.mean_local_norm),
        fmt_g6(m.global_grad_norm),
    )
}

/// Render the full CSV (header plus one row per frame per seed).
pub fn render_metrics(rows: &[MetricsRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&render_row(row));
        out.push('\n');
    }
    out
}

/// Write the CSV to `path`.
pub fn write_metrics(rows: &[MetricsRow], path: &Path) -> Result<(), MetricsError> {
    fs::write(path, render_metrics(rows)).map_err(|source| MetricsError::Write {
        path: path.display().to_string(),
        source,
    })
}

/// Parse a metrics CSV back into rows (used for schema-stability checks and
/// downstream analysis of sweep output).
pub fn parse_metrics(text: &str) -> Result<Vec<MetricsRow>, MetricsError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        Some(h) => return Err(MetricsError::Parse(format!("unexpected header: {h}"))),
        None => return Err(MetricsError::Parse("empty file".into())),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 14 {
            return Err(MetricsError::Parse(format!(
                "line {}: {} fields",
                i + 2,
                f.len()
            )));
        }
        let num = |s: &str, name: &str| -> Result<f64, MetricsError> {
            s.parse()
                .map_err(|e| MetricsError::Parse(format!("line {}: {name}: {e}", i + 2)))
        };
        let int = |s: &str, name: &str| -> Result<usize, MetricsError> {
            s.parse()
                .map_err(|e| MetricsError::Parse(format!("line {}: {name}: {e}", i + 2)))
        };
        rows.push(MetricsRow {
            seed: f[1]
                .parse()
                .map_err(|e| MetricsError::Parse(format!("line {}: seed: {e}", i + 2)))?,
            policy: f[2].to_string(),
            slots: int(f[3], "K")?,
            gamma: num(f[4], "gamma")?,
            metrics: FrameMetrics {
                frame: int(f[0], "frame")?,
                loss: num(f[5], "loss")?,
                accuracy: if f[6].is_empty() {
                    None
                } else {
                    Some(num(f[6], "accuracy")?)
                },
                active_users: int(f[7], "active_users")?,
                received_users: int(f[8], "received_users")?,
                success_slots: int(f[9], "success_slots")?,
                collision_slots: int(f[10], "collision_slots")?,
                idle_slots: int(f[11], "idle_slots")?,
                mean_local_norm: num(f[12], "mean_local_norm")?,
                global_grad_norm: num(f[13], "global_grad_norm")?,
            },
        });
    }
    Ok(rows)
}

impl MetricsRow {
    /// JSON object mirroring the CSV columns (used by `--format json`).
    pub fn json_value(&self) -> serde_json::Value {
        let m = &self.metrics;
        serde_json::json!({
            "frame": m.frame,
            "seed": self.seed,
            "policy": self.policy,
            "K": self.slots,
            "gamma": self.gamma,
            "loss": m.loss,
            "accuracy": m.accuracy,
            "active_users": m.active_users,
            "received_users": m.received_users,
            "success_slots": m.success_slots,
            "collision_slots": m.collision_slots,
            "idle_slots": m.idle_slots,
            "mean_local_norm": m.mean_local_norm,
            "global_grad_norm": m.global_grad_norm,
        })
    }
}

/// Per-run summary written as JSON next to the metrics CSV.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub policy: String,
    #[serde(rename = "K")]
    pub slots: usize,
    pub gamma: f64,
    pub seeds: Vec<u64>,
    pub final_loss_mean: f64,
    pub final_loss_std: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_accuracy_mean: Option<f64>,
}

impl RunSummary {
    /// Summarize the last frame of each seed. `rows` must hold at least one
    /// completed frame per seed (empty runs produce no summary).
    pub fn from_rows(rows: &[MetricsRow]) -> Option<RunSummary> {
        let mut finals: Vec<&MetricsRow> = Vec::new();
        for row in rows {
            match finals.iter_mut().find(|r| r.seed == row.seed) {
                Some(slot) => {
                    if row.metrics.frame >= slot.metrics.frame {
                        *slot = row;
                    }
                }
                None => finals.push(row),
            }
        }
        let first = finals.first()?;
        let losses: Vec<f64> = finals.iter().map(|r| r.metrics.loss).collect();
        let mean = losses.iter().sum::<f64>() / losses.len() as f64;
        let var = losses.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / losses.len() as f64;
        let accs: Vec<f64> = finals.iter().filter_map(|r| r.metrics.accuracy).collect();
        Some(RunSummary {
            policy: first.policy.clone(),
            slots: first.slots,
            gamma: first.gamma,
            seeds: finals.iter().map(|r| r.seed).collect(),
            final_loss_mean: mean,
            final_loss_std: var.sqrt(),
            final_accuracy_mean: if accs.is_empty() {
                None
            } else {
                Some(accs.iter().sum::<f64>() / accs.len() as f64)
            },
        })
    }
}
