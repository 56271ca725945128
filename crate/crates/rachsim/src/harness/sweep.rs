//! Grid sweeps over experiment configurations.
//!
//! A grid spec is `key=v1,v2,...[;key=...]`; the sweep runs the cross product
//! of all assignments times every seed. Points run concurrently, but output
//! rows are merged in (grid point, seed) order, so the result is byte
//! identical regardless of the worker count.

use rayon::prelude::*;

use super::config::{with_override, ExperimentConfig};
use super::metrics::{MetricsRow, CSV_HEADER};
use super::run_rows;

/// Parsed grid specification: ordered keys, each with its value list.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub entries: Vec<(String, Vec<String>)>,
}

impl GridSpec {
    /// Parse `"k=1,5,10;gamma=0.0,1.0"`. An empty string is the empty grid.
    pub fn parse(text: &str) -> Result<GridSpec, String> {
        let mut entries = Vec::new();
        for part in text.split(';') {
            let part = part.trim();
            if part.is_empty() {
                continue;
            }
            let (key, values) = part
                .split_once('=')
                .ok_or_else(|| format!("grid entry '{part}' is not key=v1,v2,..."))?;
            let values: Vec<String> = values
                .split(',')
                .map(|v| v.trim().to_string())
                .filter(|v| !v.is_empty())
                .collect();
            if values.is_empty() {
                return Err(format!("grid key '{key}' has no values"));
            }
            entries.push((key.trim().to_string(), values));
        }
        Ok(GridSpec { entries })
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Cross product of assignments, in declaration order (first key varies
    /// slowest). The empty grid yields one empty assignment.
    pub fn points(&self) -> Vec<Vec<(String, String)>> {
        let mut points: Vec<Vec<(String, String)>> = vec![Vec::new()];
        for (key, values) in &self.entries {
            let mut next = Vec::with_capacity(points.len() * values.len());
            for point in &points {
                for value in values {
                    let mut p = point.clone();
                    p.push((key.clone(), value.clone()));
                    next.push(p);
                }
            }
            points = next;
        }
        points
    }
}

/// Canonical label of a grid point, used as the leading CSV column.
pub fn point_label(coords: &[(String, String)]) -> String {
    if coords.is_empty() {
        return "base".to_string();
    }
    coords
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(";")
}

/// One failed grid point/seed combination.
#[derive(Debug, Clone)]
pub struct SweepFailure {
    pub label: String,
    pub seed: Option<u64>,
    pub error: String,
}

/// Merged sweep output: rows tagged with their grid label, plus any failures.
#[derive(Debug)]
pub struct SweepOutput {
    pub rows: Vec<(String, MetricsRow)>,
    pub failures: Vec<SweepFailure>,
}

/// Run every grid point times every seed on a pool of `jobs` workers.
/// Individual failures are recorded and the remaining points continue.
pub fn sweep(base: &ExperimentConfig, grid: &GridSpec, jobs: usize) -> SweepOutput {
    // resolve configs up front so config errors are reported per point
    let mut tasks: Vec<(String, Option<u64>, Result<ExperimentConfig, String>)> = Vec::new();
    for coords in grid.points() {
        let label = point_label(&coords);
        let mut cfg = Ok(base.clone());
        for (key, value) in &coords {
            cfg = cfg.and_then(|c| with_override(&c, key, value));
        }
        match cfg {
            Ok(cfg) => {
                for &seed in &cfg.seeds {
                    tasks.push((label.clone(), Some(seed), Ok(cfg.clone())));
                }
            }
            Err(e) => tasks.push((label, None, Err(e))),
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .expect("worker pool");
    let results: Vec<Result<Vec<(String, MetricsRow)>, SweepFailure>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|(label, seed, cfg)| match (cfg, seed) {
                (Ok(cfg), Some(seed)) => match run_rows(cfg, *seed) {
                    Ok((rows, _)) => Ok(rows.into_iter().map(|r| (label.clone(), r)).collect()),
                    Err(e) => Err(SweepFailure {
                        label: label.clone(),
                        seed: Some(*seed),
                        error: e.to_string(),
                    }),
                },
                (Err(e), _) => Err(SweepFailure {
                    label: label.clone(),
                    seed: None,
                    error: e.clone(),
                }),
                (Ok(_), None) => unreachable!("config tasks always carry a seed"),
            })
            .collect()
    });

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for result in results {
        match result {
            Ok(mut r) => rows.append(&mut r),
            Err(f) => failures.push(f),
        }
    }
    SweepOutput { rows, failures }
}

/// Render sweep output: the standard schema with a leading `grid` column.
pub fn render_sweep_csv(rows: &[(String, MetricsRow)]) -> String {
    let mut out = String::new();
    out.push_str("grid,");
    out.push_str(CSV_HEADER);
    out.push('\n');
    for (label, row) in rows {
        out.push_str(label);
        out.push(',');
        let rendered = super::metrics::render_metrics(std::slice::from_ref(row));
        out.push_str(rendered.lines().nth(1).expect("one data row"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::parse_config;

    fn base() -> ExperimentConfig {
        parse_config(
            "frames = 3\nusers = 2\nslots = 2\nseeds = [1, 2]\n\
             [task]\npoints = 20\nfeatures = 4\nbatch = 5",
        )
        .unwrap()
    }

    #[test]
    fn grid_parsing_and_points() {
        let g = GridSpec::parse("k=1,5,10;gamma=0.0,1.0").unwrap();
        assert_eq!(g.points().len(), 6);
        assert_eq!(point_label(&g.points()[0]), "k=1;gamma=0.0");
        assert!(GridSpec::parse("").unwrap().is_empty());
        assert!(GridSpec::parse("oops").is_err());
        assert!(GridSpec::parse("k=").is_err());
    }

    #[test]
    fn empty_grid_is_a_single_base_run() {
        let out = sweep(&base(), &GridSpec::parse("").unwrap(), 1);
        assert!(out.failures.is_empty());
        // 2 seeds x 3 frames
        assert_eq!(out.rows.len(), 6);
        assert!(out.rows.iter().all(|(label, _)| label == "base"));
    }

    #[test]
    fn sweep_point_equals_standalone_run() {
        let grid = GridSpec::parse("gamma=0.5").unwrap();
        let out = sweep(&base(), &grid, 2);
        let standalone = {
            let cfg = with_override(&base(), "gamma", "0.5").unwrap();
            crate::harness::run_all_seeds(&cfg).unwrap()
        };
        let swept: Vec<MetricsRow> = out.rows.into_iter().map(|(_, r)| r).collect();
        assert_eq!(swept, standalone);
    }

    #[test]
    fn output_is_scheduling_invariant() {
        let grid = GridSpec::parse("k=1,2;gamma=0.0,1.0").unwrap();
        let serial = render_sweep_csv(&sweep(&base(), &grid, 1).rows);
        let parallel = render_sweep_csv(&sweep(&base(), &grid, 8).rows);
        assert_eq!(serial, parallel);
    }

    #[test]
    fn failures_recorded_and_other_points_continue() {
        // k=40 overflows the 4-float budget (slot capacity 0)
        let grid = GridSpec::parse("k=2,40").unwrap();
        let out = sweep(&base(), &grid, 2);
        assert_eq!(out.failures.len(), 1);
        assert!(out.failures[0].error.contains("slot capacity"));
        assert_eq!(out.rows.len(), 6); // the k=2 point ran both seeds
    }

    #[test]
    fn unknown_grid_key_is_a_point_failure() {
        let out = sweep(&base(), &GridSpec::parse("warp=9").unwrap(), 1);
        assert_eq!(out.rows.len(), 0);
        assert_eq!(out.failures.len(), 1);
        assert!(out.failures[0].error.contains("unknown grid key"));
    }
}
