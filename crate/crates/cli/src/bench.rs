//! Per-stage wall-clock timing of the delay-and-sum pipeline.

use std::fmt::Write as _;
use std::fs;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use parecon::beamform::{das, DasConfig};
use parecon::delay::DelayLut;
use parecon::signal::axial_envelope;

use crate::commands::random_frame;
use crate::config::{ConfigError, RunConfig};

pub const CSV_FILE: &str = "benchmark.csv";
pub const REPORT_FILE: &str = "benchmark.txt";
pub const STAGES: [&str; 3] = ["lut_apply", "beamform", "postprocess"];

/// Median and 95th percentile (nearest rank) in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageStats {
    pub median: f64,
    pub p95: f64,
}

pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn stats(samples: &[f64]) -> StageStats {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let median = if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    };
    StageStats {
        median,
        p95: percentile(&s, 0.95),
    }
}

fn machine_info() -> String {
    let cpu = fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|t| {
            t.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split_once(':'))
                .map(|(_, v)| v.trim().to_string())
        })
        .unwrap_or_else(|| "unknown".into());
    let cores = std::thread::available_parallelism().map_or(0, |n| n.get());
    format!(
        "os {} / {}\ncpu {cpu}\nlogical cores {cores}\nworker threads {}\n",
        std::env::consts::OS,
        std::env::consts::ARCH,
        rayon::current_num_threads()
    )
}

pub fn benchmark(cfg: &RunConfig) -> Result<()> {
    let b = &cfg.benchmark;
    if b.repetitions == 0 {
        bail!(ConfigError("`benchmark.repetitions` must be >= 1".into()));
    }
    let das_cfg = DasConfig {
        apply_hilbert: false,
        ..b.das
    };
    das_cfg.validate()?;
    let grid = cfg.grid();
    let frame = random_frame(cfg, cfg.seed)?;

    let t = Instant::now();
    let lut = match &b.lut_cache {
        Some(dir) => DelayLut::load_or_build(dir, &grid, &frame.geometry, &frame.acquisition)?.0,
        None => DelayLut::build(&grid, &frame.geometry, &frame.acquisition)?,
    };
    let lut_ms = t.elapsed().as_secs_f64() * 1e3;

    let mut rows: Vec<[f64; 3]> = Vec::with_capacity(b.repetitions);
    for rep in 0..b.warmup + b.repetitions {
        let t0 = Instant::now();
        let tensor = lut.apply(&frame)?;
        let t1 = Instant::now();
        let summed = das(&tensor, &das_cfg)?;
        let t2 = Instant::now();
        let envelope = axial_envelope(&summed.data);
        let t3 = Instant::now();
        std::hint::black_box(&envelope);
        if rep >= b.warmup {
            let ms = |a: Instant, b: Instant| (b - a).as_secs_f64() * 1e3;
            rows.push([ms(t0, t1), ms(t1, t2), ms(t2, t3)]);
        }
    }

    fs::create_dir_all(&cfg.out)?;
    let mut csv = String::from("repetition,lut_apply_ms,beamform_ms,postprocess_ms,total_ms\n");
    for (i, r) in rows.iter().enumerate() {
        writeln!(
            csv,
            "{i},{},{},{},{}",
            r[0],
            r[1],
            r[2],
            r.iter().sum::<f64>()
        )?;
    }
    let file = cfg.out.join(CSV_FILE);
    fs::write(&file, csv).with_context(|| format!("writing {}", file.display()))?;

    let mut report = String::new();
    writeln!(
        report,
        "das pipeline: frame {}x{} -> tensor {}x{}x{}",
        frame.acquisition.sample_count,
        frame.geometry.element_count(),
        grid.nz,
        grid.nx,
        frame.geometry.element_count()
    )?;
    writeln!(
        report,
        "repetitions {} (after {} warmup)\nLUT build/load {lut_ms:.1} ms",
        b.repetitions, b.warmup
    )?;
    report.push_str(&machine_info());
    writeln!(
        report,
        "{:<12} {:>10} {:>10}",
        "stage", "median_ms", "p95_ms"
    )?;
    for (k, name) in STAGES.iter().enumerate() {
        let s = stats(&rows.iter().map(|r| r[k]).collect::<Vec<_>>());
        writeln!(report, "{name:<12} {:>10.3} {:>10.3}", s.median, s.p95)?;
    }
    let s = stats(&rows.iter().map(|r| r.iter().sum()).collect::<Vec<_>>());
    writeln!(report, "{:<12} {:>10.3} {:>10.3}", "total", s.median, s.p95)?;
    let file = cfg.out.join(REPORT_FILE);
    fs::write(&file, &report).with_context(|| format!("writing {}", file.display()))?;
    print!("{report}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_sample_has_median_equal_to_p95() {
        let s = stats(&[3.5]);
        assert_eq!(s.median, s.p95);
    }

    #[test]
    fn nearest_rank_percentiles() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 0.95), 95.0);
        assert_eq!(stats(&v).median, 50.5);
        assert_eq!(percentile(&v[..20], 0.95), 19.0);
    }
}
