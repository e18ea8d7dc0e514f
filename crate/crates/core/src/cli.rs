//! Command-line driver: `run`, `sweep` and `validate`.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 simulation or I/O fault.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use crate::analysis::{recovery_stats, RecoveryStats, RecoveryWindows};
use crate::config::{load_config, FailureEvent, ScenarioConfig};
use crate::error::SimError;
use crate::output::{write_summary, FileSink, RunOutputs};
use crate::sim::{run_scenario, RecordCollector, RunSummary};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_FAULT: i32 = 2;

/// Failure time used by `sweep` when the config schedules none.
const DEFAULT_SWEEP_FAILURE_TIME: f64 = 10.0;

#[derive(Debug, Parser)]
#[command(name = "mapnet", version, about = "Self-organizing mobile access point network simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one scenario and write metrics, snapshots and a summary.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the configured master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Seconds between periodic snapshots (0 disables them).
        #[arg(long)]
        snapshot_every: Option<f64>,
    },
    /// Repeat the scenario over failure levels and seeds and aggregate recovery.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4")]
        failure_levels: Vec<f64>,
        /// Number of seeds per level, counting up from the configured seed.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parse and check a configuration only.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

/// Parse `args` (including the program name) and execute. Returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &SimError) -> i32 {
    match e {
        SimError::Config(_) => EXIT_CONFIG,
        _ => EXIT_FAULT,
    }
}

fn execute(cmd: Command) -> Result<(), SimError> {
    match cmd {
        Command::Validate { config } => {
            let cfg = load_config(&config)?;
            println!(
                "ok: {} MSDs, {} MAPs, {} steps, {} failure event(s)",
                cfg.m,
                cfg.l,
                cfg.step_count(),
                cfg.failures.len()
            );
            Ok(())
        }
        Command::Run {
            config,
            out,
            seed,
            snapshot_every,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(every) = snapshot_every {
                cfg.output.snapshot_every = every;
                cfg.validate()?;
            }
            let summary = run_to_dir(&cfg, &out, true)?;
            let fin = summary.final_metrics;
            println!(
                "{} steps in {:.2}s; final coverage {}, fiedler {}, converged {}",
                summary.steps,
                summary.wall_time_secs,
                fin.map_or("-".into(), |r| format!("{:.4}", r.coverage)),
                fin.map_or("-".into(), |r| format!("{:.4}", r.fiedler)),
                summary.converged
            );
            Ok(())
        }
        Command::Sweep {
            config,
            failure_levels,
            seeds,
            out,
        } => {
            let cfg = load_config(&config)?;
            let rows = run_sweep(&cfg, &failure_levels, seeds, &out)?;
            for level in &failure_levels {
                let group: Vec<_> = rows.iter().filter(|r| r.level == *level).collect();
                let connected = group.iter().filter(|r| r.stats.is_some_and(|s| s.final_connected)).count();
                println!("level {level:.2}: {connected}/{} runs connected at horizon", group.len());
            }
            Ok(())
        }
    }
}

/// Run `cfg`, writing `metrics.csv`, `summary.json`, the resolved `config.toml`
/// and (optionally) `snapshots/` into `dir`.
pub fn run_to_dir(cfg: &ScenarioConfig, dir: &Path, snapshots: bool) -> Result<RunSummary, SimError> {
    let outputs = RunOutputs::in_dir(dir, snapshots && cfg.output.snapshot_every >= 0.0);
    run_with_outputs(cfg, &outputs)
}

pub fn run_with_outputs(cfg: &ScenarioConfig, outputs: &RunOutputs) -> Result<RunSummary, SimError> {
    let mut sink = FileSink::create(outputs)?;
    if let Some(dir) = outputs.summary_path.parent() {
        let path = dir.join("config.toml");
        fs::write(&path, cfg.to_toml_string()).map_err(|e| SimError::io(&path, e))?;
    }
    let result = run_scenario(cfg, &mut sink);
    // partial output is kept on failure
    sink.flush()?;
    let summary = result?;
    write_summary(&summary, &outputs.summary_path)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub level: f64,
    pub seed: u64,
    pub metrics_path: PathBuf,
    pub stats: Option<RecoveryStats>,
}

pub fn sweep_metrics_name(level: f64, seed: u64) -> String {
    format!("metrics_level{level:.2}_seed{seed}.csv")
}

/// Configuration for one sweep cell: the base scenario with a single failure
/// event of the given level.
pub fn sweep_config(base: &ScenarioConfig, level: f64, seed: u64) -> ScenarioConfig {
    let time = base
        .failures
        .first()
        .map_or(DEFAULT_SWEEP_FAILURE_TIME, |f| f.time);
    ScenarioConfig {
        seed,
        failures: vec![FailureEvent { time, fraction: level }],
        ..base.clone()
    }
}

/// Run every (level, seed) pair, one metrics file per run, plus `aggregate.csv`.
pub fn run_sweep(base: &ScenarioConfig, levels: &[f64], seeds: u64, out: &Path) -> Result<Vec<SweepRow>, SimError> {
    for (i, &level) in levels.iter().enumerate() {
        if !(level.is_finite() && (0.0..=1.0).contains(&level)) {
            return Err(crate::error::ConfigError::Invalid {
                field: format!("failure-levels[{i}]"),
                message: "must lie in [0, 1]".into(),
                line: None,
            }
            .into());
        }
    }
    fs::create_dir_all(out).map_err(|e| SimError::io(out, e))?;
    let jobs: Vec<(f64, u64)> = levels
        .iter()
        .flat_map(|&l| (0..seeds).map(move |k| (l, base.seed.wrapping_add(k))))
        .collect();

    let rows = jobs
        .par_iter()
        .map(|&(level, seed)| {
            let cfg = sweep_config(base, level, seed);
            let metrics_path = out.join(sweep_metrics_name(level, seed));
            let mut collector = RecordCollector::default();
            run_scenario(&cfg, &mut collector)?;
            crate::output::write_metrics(&collector.records, &metrics_path)?;
            let stats = recovery_stats(&collector.records, cfg.failures[0].time, RecoveryWindows::default());
            Ok(SweepRow {
                level,
                seed,
                metrics_path,
                stats,
            })
        })
        .collect::<Result<Vec<_>, SimError>>()?;

    let path = out.join("aggregate.csv");
    fs::write(&path, aggregate_csv(levels, &rows)).map_err(|e| SimError::io(&path, e))?;
    Ok(rows)
}

const AGGREGATE_FIELDS: usize = 9;

fn stats_fields(s: &RecoveryStats) -> [f64; AGGREGATE_FIELDS] {
    [
        s.pre_coverage,
        s.post_min_coverage,
        s.recovered_coverage,
        s.coverage_ratio,
        s.pre_epidemic,
        s.recovered_epidemic,
        s.epidemic_ratio,
        s.final_fiedler,
        if s.final_connected { 1.0 } else { 0.0 },
    ]
}

/// Per-run rows followed by one `mean` row per level.
pub fn aggregate_csv(levels: &[f64], rows: &[SweepRow]) -> String {
    let mut text = String::from(
        "level,seed,pre_coverage,post_min_coverage,recovered_coverage,coverage_ratio,\
         pre_epidemic,recovered_epidemic,epidemic_ratio,final_fiedler,final_connected\n",
    );
    let push = |text: &mut String, level: f64, seed: &str, vals: &[f64]| {
        let _ = write!(text, "{level:.2},{seed}");
        for v in vals {
            let _ = write!(text, ",{v:.9e}");
        }
        text.push('\n');
    };
    for r in rows {
        match &r.stats {
            Some(s) => push(&mut text, r.level, &r.seed.to_string(), &stats_fields(s)),
            None => push(&mut text, r.level, &r.seed.to_string(), &[f64::NAN; AGGREGATE_FIELDS]),
        }
    }
    for &level in levels {
        let group: Vec<[f64; AGGREGATE_FIELDS]> = rows
            .iter()
            .filter(|r| r.level == level)
            .filter_map(|r| r.stats.as_ref().map(stats_fields))
            .collect();
        if group.is_empty() {
            continue;
        }
        let mut mean = [0.0; AGGREGATE_FIELDS];
        for g in &group {
            for (m, v) in mean.iter_mut().zip(g) {
                *m += v / group.len() as f64;
            }
        }
        push(&mut text, level, "mean", &mean);
    }
    text
}
