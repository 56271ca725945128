//! Experiment harness: configuration, deterministic RNG streams, metric
//! serialization, grid sweeps, and the canned figure configurations.

pub mod config;
pub mod figures;
pub mod metrics;
pub mod rng;
pub mod sweep;

pub use config::{parse_config, ConfigError, ExperimentConfig};
pub use metrics::{
    parse_metrics, render_metrics, write_metrics, FrameMetrics, MetricsRow, RunSummary,
};
pub use rng::rng_stream;

use crate::fedloop::{run_experiment, RunError, RunResult};

/// Run one seed and tag each frame's metrics with the run context.
pub fn run_rows(
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<(Vec<MetricsRow>, RunResult), RunError> {
    let result = run_experiment(cfg, seed)?;
    let rows = result
        .records
        .iter()
        .map(|rec| MetricsRow {
            seed,
            policy: cfg.policy.label(),
            slots: cfg.channel.num_slots(),
            gamma: cfg.gamma,
            metrics: rec.metrics.clone(),
        })
        .collect();
    Ok((rows, result))
}

/// Run every configured seed in order and concatenate the rows.
pub fn run_all_seeds(cfg: &ExperimentConfig) -> Result<Vec<MetricsRow>, RunError> {
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        rows.extend(run_rows(cfg, seed)?.0);
    }
    Ok(rows)
}
