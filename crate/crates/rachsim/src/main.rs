//! Command-line front end: single runs, grid sweeps, throughput checks, and
//! canned figure recipes. Progress goes to stderr, data to files and stdout.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use rachsim::channel::{expected_throughput, simulate_frame, ChannelConfig};
use rachsim::harness::figures;
use rachsim::harness::metrics::{fmt_g6, render_metrics, MetricsRow, RunSummary};
use rachsim::harness::sweep::{render_sweep_csv, sweep, GridSpec, SweepOutput};
use rachsim::harness::{parse_config, rng_stream, run_all_seeds, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "rachsim",
    version,
    about = "Federated SGD over a slotted-ALOHA channel"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Override the config's seed list with a single master seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output path for metrics
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Metrics file format
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config; writes metrics and prints a JSON summary
    Run {
        /// Path to a TOML experiment config
        config: PathBuf,
    },
    /// Run the cross product of a grid spec over a base config
    Sweep {
        config: PathBuf,
        /// Grid spec, e.g. "k=1,5,10;gamma=0.0,1.0"
        #[arg(long)]
        grid: String,
        /// Worker threads (output is identical for any value)
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Analytic vs Monte-Carlo slotted-ALOHA throughput
    Throughput {
        #[arg(long)]
        users: usize,
        #[arg(long)]
        prob: f64,
        #[arg(long)]
        slots: usize,
    },
    /// Emit the data behind a canned figure (see `figure list`)
    Figure {
        /// Figure name, or "list" to enumerate the recipes
        name: String,
        /// Optional base config overriding the canned one
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

enum CliError {
    Config(String),
    Runtime(String),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { ref config } => run_cmd(config, &cli),
        Command::Sweep {
            ref config,
            ref grid,
            jobs,
        } => {
            let cfg = load_config(config, cli.seed)?;
            let grid = GridSpec::parse(grid).map_err(CliError::Config)?;
            let out = output_path(&cli, cfg.out.as_deref(), "sweep");
            run_sweep(&cfg, &grid, jobs, &out, cli.format)
        }
        Command::Throughput { users, prob, slots } => throughput_cmd(users, prob, slots, cli.seed),
        Command::Figure {
            ref name,
            ref config,
            jobs,
        } => {
            if name == "list" {
                for fig in figures::FIGURES {
                    println!("{:<10} {}", fig.name, fig.description);
                }
                return Ok(());
            }
            let fig = figures::lookup(name).ok_or_else(|| {
                CliError::Config(format!(
                    "unknown figure '{name}' (available: {})",
                    figures::FIGURES
                        .iter()
                        .map(|f| f.name)
                        .collect::<Vec<_>>()
                        .join(", ")
                ))
            })?;
            let cfg = match config {
                Some(path) => load_config(path, cli.seed)?,
                None => {
                    let mut cfg =
                        parse_config(fig.config).map_err(|e| CliError::Config(e.to_string()))?;
                    if let Some(seed) = cli.seed {
                        cfg.seeds = vec![seed];
                    }
                    cfg
                }
            };
            let grid = GridSpec::parse(fig.grid).map_err(CliError::Config)?;
            let out = output_path(&cli, None, fig.name);
            eprintln!("figure {}: {}", fig.name, fig.description);
            run_sweep(&cfg, &grid, jobs, &out, cli.format)
        }
    }
}

fn load_config(path: &Path, seed_override: Option<u64>) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("reading {}: {e}", path.display())))?;
    let mut cfg = parse_config(&text).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(seed) = seed_override {
        cfg.seeds = vec![seed];
    }
    Ok(cfg)
}

fn output_path(cli: &Cli, cfg_out: Option<&str>, stem: &str) -> PathBuf {
    let ext = match cli.format {
        Format::Csv => "csv",
        Format::Json => "json",
    };
    cli.out
        .clone()
        .or_else(|| cfg_out.map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(format!("{stem}.{ext}")))
}

fn write_data(path: &Path, data: &str) -> Result<(), CliError> {
    fs::write(path, data).map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))
}

fn run_cmd(config: &Path, cli: &Cli) -> Result<(), CliError> {
    let cfg = load_config(config, cli.seed)?;
    let out = output_path(cli, cfg.out.as_deref(), "metrics");
    eprintln!(
        "run: policy {}, K = {}, {} frames, {} seed(s)",
        cfg.policy.label(),
        cfg.channel.num_slots(),
        cfg.frames,
        cfg.seeds.len()
    );
    let rows = run_all_seeds(&cfg).map_err(|e| CliError::Runtime(e.to_string()))?;
    match cli.format {
        Format::Csv => write_data(&out, &render_metrics(&rows))?,
        Format::Json => {
            let values: Vec<_> = rows.iter().map(MetricsRow::json_value).collect();
            let text = serde_json::to_string_pretty(&values).expect("json rows");
            write_data(&out, &text)?;
        }
    }
    eprintln!("metrics written to {}", out.display());
    match RunSummary::from_rows(&rows) {
        Some(summary) => println!(
            "{}",
            serde_json::to_string_pretty(&summary).expect("json summary")
        ),
        None => println!("{{}}"),
    }
    Ok(())
}

fn run_sweep(
    cfg: &ExperimentConfig,
    grid: &GridSpec,
    jobs: usize,
    out: &Path,
    format: Format,
) -> Result<(), CliError> {
    let SweepOutput { rows, failures } = sweep(cfg, grid, jobs);
    match format {
        Format::Csv => write_data(out, &render_sweep_csv(&rows))?,
        Format::Json => {
            let values: Vec<_> = rows
                .iter()
                .map(|(label, row)| {
                    let mut v = row.json_value();
                    v["grid"] = serde_json::Value::String(label.clone());
                    v
                })
                .collect();
            write_data(
                out,
                &serde_json::to_string_pretty(&values).expect("json rows"),
            )?;
        }
    }
    eprintln!("{} rows written to {}", rows.len(), out.display());
    if !failures.is_empty() {
        for f in &failures {
            match f.seed {
                Some(seed) => eprintln!("failed: {} seed {}: {}", f.label, seed, f.error),
                None => eprintln!("failed: {}: {}", f.label, f.error),
            }
        }
        return Err(CliError::Runtime(format!(
            "{} of {} grid tasks failed",
            failures.len(),
            failures.len() + rows.len()
        )));
    }
    Ok(())
}

fn throughput_cmd(
    users: usize,
    prob: f64,
    slots: usize,
    seed: Option<u64>,
) -> Result<(), CliError> {
    if users < 1 {
        return Err(CliError::Config("--users must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&prob) {
        return Err(CliError::Config("--prob must be in [0,1]".into()));
    }
    if slots < 1 {
        return Err(CliError::Config("--slots must be >= 1".into()));
    }
    let analytic = expected_throughput(users, prob);
    let cfg = ChannelConfig::new(slots, slots as f64, 1.0)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let active: BTreeSet<usize> = (0..users).collect();
    let mut rng = rng_stream(seed.unwrap_or(0), &[("throughput", 0)]);
    let outcome = simulate_frame(&active, prob, &cfg, &mut rng);
    let empirical = outcome.success_slots() as f64 / slots as f64;
    println!("users {users}");
    println!("prob {}", fmt_g6(prob));
    println!("slots {slots}");
    println!("analytic {}", fmt_g6(analytic));
    println!("empirical {}", fmt_g6(empirical));
    println!("abs_error {}", fmt_g6((analytic - empirical).abs()));
    Ok(())
}
