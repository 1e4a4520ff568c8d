//! `parecon`: batch front end for simulation, reconstruction, dataset
//! generation, metrics and benchmarking.
//!
//! Exit codes: 0 success, 2 configuration or validation error, 3 numerical
//! failure at run time.

mod bench;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use config::{ConfigError, Method, Override, RunConfig};

#[derive(Parser)]
#[command(
    name = "parecon",
    version,
    about = "Photoacoustic linear-array toolkit"
)]
struct Cli {
    /// TOML or JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides any config key, e.g. `--set reconstruct.ista.max_iters=50`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate raw frames from an image set.
    Simulate {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Reconstruct the frames of a paired dataset.
    Reconstruct {
        #[arg(long, value_parser = parse_method)]
        method: Option<Method>,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        lut_cache: Option<PathBuf>,
    },
    /// Generate a synthetic paired dataset.
    Dataset {
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        masks: Option<PathBuf>,
        #[arg(long)]
        previews: bool,
    },
    /// Compare two image sets.
    Metrics {
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        estimate: Option<PathBuf>,
    },
    /// Time the delay-and-sum pipeline stage by stage.
    Benchmark {
        #[arg(long)]
        repetitions: Option<usize>,
        #[arg(long)]
        lut_cache: Option<PathBuf>,
    },
    /// Build or look up a cached LUT; optionally write a golden tensor.
    LutCache {
        #[arg(long)]
        dir: Option<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        emit_tensor: Option<PathBuf>,
    },
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown method `{s}` (das, mv, dmas, ista, kspace)"))
}

fn overrides(cli: &Cli) -> Result<Vec<Override>> {
    let mut o = Vec::new();
    let mut path = |key: &str, v: &Option<PathBuf>| {
        if let Some(p) = v {
            o.push(Override::path(key, p));
        }
    };
    path("out", &cli.out);
    match &cli.command {
        Command::Simulate { input } => path("simulate.input", input),
        Command::Reconstruct {
            input,
            truth,
            lut_cache,
            ..
        } => {
            path("reconstruct.input", input);
            path("reconstruct.truth", truth);
            path("reconstruct.lut_cache", lut_cache);
        }
        Command::Dataset { masks, .. } => path("dataset.masks", masks),
        Command::Metrics { truth, estimate } => {
            path("metrics.truth", truth);
            path("metrics.estimate", estimate);
        }
        Command::Benchmark { lut_cache, .. } => path("benchmark.lut_cache", lut_cache),
        Command::LutCache {
            dir,
            input,
            emit_tensor,
        } => {
            path("lut_cache.dir", dir);
            path("lut_cache.input", input);
            path("lut_cache.emit_tensor", emit_tensor);
        }
    }
    if let Some(s) = cli.seed {
        o.push(Override::new("seed", s as i64));
    }
    if let Some(j) = cli.jobs {
        o.push(Override::new("jobs", j as i64));
    }
    match &cli.command {
        Command::Reconstruct {
            method: Some(m), ..
        } => o.push(Override::new("reconstruct.method", m.name())),
        Command::Dataset {
            count, previews, ..
        } => {
            if let Some(c) = count {
                o.push(Override::new("dataset.count", *c as i64));
            }
            if *previews {
                o.push(Override::new("dataset.previews", true));
            }
        }
        Command::Benchmark {
            repetitions: Some(r),
            ..
        } => o.push(Override::new("benchmark.repetitions", *r as i64)),
        _ => {}
    }
    // explicit --set wins over the dedicated flags
    for s in &cli.set {
        o.push(Override::parse(s)?);
    }
    Ok(o)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides(cli)?)?;
    if let Some(jobs) = cfg.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()?;
    }
    cfg.write_resolved()?;
    match cli.command {
        Command::Simulate { .. } => commands::simulate(&cfg),
        Command::Reconstruct { .. } => commands::reconstruct(&cfg),
        Command::Dataset { .. } => commands::dataset(&cfg),
        Command::Metrics { .. } => commands::metrics(&cfg),
        Command::Benchmark { .. } => bench::benchmark(&cfg),
        Command::LutCache { .. } => commands::lut_cache(&cfg),
    }
}

/// Numerical failures exit with 3, everything else a run can reject with 2.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<parecon::Error>() {
            return match e {
                parecon::Error::Numerical(_)
                | parecon::Error::NonFinite(_)
                | parecon::Error::NoPeak { .. } => 3,
                _ => 2,
            };
        }
    }
    2
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
