use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use ndarray::Array2;
use parecon::beamform::{das, dmas, minimum_variance};
use parecon::dataset::{
    read_dataset, read_images, read_manifest, write_dataset_with, write_golden_tensor,
    write_images, DatasetKind, WriteOptions,
};
use parecon::delay::DelayLut;
use parecon::forward::ForwardOperator;
use parecon::inverse::{ista_reconstruct, kspace_reconstruct};
use parecon::metrics::{compare, compare_dirs, BatchReport};
use parecon::phantom::{generate_dataset, ingest_masks, record_seeds, MaskSource};
use parecon::{preview, DatasetRecord, GridSpec, ImageGrid, RawFrame};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{require_path, ConfigError, Method, RunConfig};

pub const METRICS_FILE: &str = "metrics.csv";
pub const PREVIEW_DIR: &str = "previews";
pub const ISTA_LOG_DIR: &str = "ista";

fn save_previews(images: &[&Array2<f64>], prefix: &str, db: f64, out: &Path) -> Result<()> {
    let dir = out.join(PREVIEW_DIR);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    images.par_iter().enumerate().try_for_each(|(i, img)| {
        preview::save_png(img, db, &dir.join(format!("{prefix}_{i:05}.png")))?;
        Ok(())
    })
}

fn write_report(report: &BatchReport, out: &Path) -> Result<()> {
    let file = out.join(METRICS_FILE);
    fs::write(&file, report.to_csv()).with_context(|| format!("writing {}", file.display()))?;
    let (pm, ps) = report.psnr_stats();
    let (sm, ss) = report.ssim_stats();
    println!(
        "records {}  PSNR {pm:.3} ± {ps:.3} dB  SSIM {sm:.4} ± {ss:.4}",
        report.rows.len()
    );
    Ok(())
}

/// Ground-truth images through the forward model.
pub fn simulate(cfg: &RunConfig) -> Result<()> {
    let input = require_path(&cfg.simulate.input, "simulate.input")?;
    let (_, images) = read_images(&input)?;
    let grid = images.first().map(|im| im.grid).ok_or_else(|| {
        ConfigError(format!(
            "`simulate.input`: {} holds no records",
            input.display()
        ))
    })?;
    let acq = cfg.acquisition();
    let op = ForwardOperator::new(
        grid,
        cfg.geometry()?,
        acq,
        cfg.impulse(acq.sampling_rate)?,
        cfg.forward_config(),
    )?;
    let noise = cfg.forward.noise_std;
    let seeds = record_seeds(cfg.seed, images.len());
    let records = images
        .into_par_iter()
        .zip(seeds)
        .map(|(image, seed)| {
            let sim = op.simulate(&image, seed)?;
            let snr_db = if noise > 0.0 {
                let clean = op.apply(&image.data)?;
                let peak = clean.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if peak > 0.0 {
                    20.0 * (peak / noise).log10()
                } else {
                    0.0
                }
            } else {
                0.0
            };
            Ok(DatasetRecord {
                ground_truth: image,
                raw: sim.frame,
                snr_db,
                seed,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let options = WriteOptions {
        noise_std: (noise > 0.0).then_some(noise),
        source: Some("simulate".into()),
    };
    write_dataset_with(&records, &cfg.out, &options)?;
    println!(
        "simulated {} frames into {}",
        records.len(),
        cfg.out.display()
    );
    Ok(())
}

fn lut_for(cfg_dir: Option<&Path>, grid: &GridSpec, frame: &RawFrame) -> Result<DelayLut> {
    Ok(match cfg_dir {
        Some(dir) => {
            let (lut, hit) =
                DelayLut::load_or_build(dir, grid, &frame.geometry, &frame.acquisition)?;
            log::info!(
                "LUT cache {}: {}",
                dir.display(),
                if hit { "hit" } else { "miss" }
            );
            lut
        }
        None => DelayLut::build(grid, &frame.geometry, &frame.acquisition)?,
    })
}

/// Reconstructs every frame of a paired dataset.
pub fn reconstruct(cfg: &RunConfig) -> Result<()> {
    let rc = &cfg.reconstruct;
    let input = require_path(&rc.input, "reconstruct.input")?;
    let manifest = read_manifest(&input)?;
    if manifest.kind != DatasetKind::Paired {
        bail!(ConfigError(format!(
            "`reconstruct.input`: {} is an image set, raw frames are needed",
            input.display()
        )));
    }
    let records = read_dataset(&input)?;
    let grid = manifest.grid;
    let geometry = manifest.geometry.clone();
    let acq = manifest.acquisition;

    // validate up front so a bad method config fails before any work
    match rc.method {
        Method::Das => rc.das.validate()?,
        Method::Mv => rc.mv.validate(geometry.element_count())?,
        Method::Dmas => rc.dmas.validate()?,
        Method::Ista => rc.ista.validate()?,
        Method::Kspace => rc.kspace.validate()?,
    }
    let lut = match rc.method {
        Method::Das | Method::Mv | Method::Dmas => match records.first() {
            Some(r) => Some(lut_for(rc.lut_cache.as_deref(), &grid, &r.raw)?),
            None => None,
        },
        _ => None,
    };
    let op = match rc.method {
        Method::Ista => Some(ForwardOperator::new(
            grid,
            geometry,
            acq,
            cfg.impulse(acq.sampling_rate)?,
            cfg.forward_config(),
        )?),
        _ => None,
    };

    let results: Vec<(ImageGrid, Option<String>)> = records
        .par_iter()
        .map(|r| -> Result<_> {
            Ok(match rc.method {
                Method::Das => (das(&lut.as_ref().unwrap().apply(&r.raw)?, &rc.das)?, None),
                Method::Mv => {
                    let t = lut.as_ref().unwrap().apply(&r.raw)?;
                    (minimum_variance(&t, &rc.mv)?.image, None)
                }
                Method::Dmas => (dmas(&lut.as_ref().unwrap().apply(&r.raw)?, &rc.dmas)?, None),
                Method::Ista => {
                    let (image, out) = ista_reconstruct(&r.raw, op.as_ref().unwrap(), &rc.ista)?;
                    (image, Some(out.log_csv()))
                }
                Method::Kspace => (kspace_reconstruct(&r.raw, &grid, &rc.kspace)?, None),
            })
        })
        .collect::<Result<_>>()?;

    let images: Vec<ImageGrid> = results.iter().map(|(im, _)| im.clone()).collect();
    write_images(&images, &manifest, rc.method.name(), &cfg.out)?;
    if rc.previews {
        let views: Vec<&Array2<f64>> = images.iter().map(|im| &im.data).collect();
        save_previews(&views, rc.method.name(), rc.preview_db, &cfg.out)?;
    }
    if rc.method == Method::Ista {
        let dir = cfg.out.join(ISTA_LOG_DIR);
        fs::create_dir_all(&dir)?;
        for (i, (_, log)) in results.iter().enumerate() {
            fs::write(
                dir.join(format!("log_{i:05}.csv")),
                log.as_deref().unwrap_or(""),
            )?;
        }
    }
    println!(
        "{} reconstructed {} frames into {}",
        rc.method.name(),
        images.len(),
        cfg.out.display()
    );

    let truths: Vec<ImageGrid> = match &rc.truth {
        Some(_) => read_images(&require_path(&rc.truth, "reconstruct.truth")?)?.1,
        None => records.into_iter().map(|r| r.ground_truth).collect(),
    };
    if truths.len() != images.len() {
        bail!(ConfigError(format!(
            "`reconstruct.truth` holds {} images for {} frames",
            truths.len(),
            images.len()
        )));
    }
    if !images.is_empty() {
        let rows = truths
            .iter()
            .zip(&images)
            .map(|(t, e)| compare(&t.data, &e.data, &rc.ssim))
            .collect::<parecon::Result<_>>()?;
        write_report(&BatchReport { rows }, &cfg.out)?;
    }
    Ok(())
}

/// Generates a synthetic paired dataset.
pub fn dataset(cfg: &RunConfig) -> Result<()> {
    let ds = &cfg.dataset;
    let acq = cfg.acquisition();
    let op = ForwardOperator::new(
        cfg.grid(),
        cfg.geometry()?,
        acq,
        cfg.impulse(acq.sampling_rate)?,
        cfg.forward_config(),
    )?;
    let masks = match &ds.masks {
        Some(_) => Some(ingest_masks(&require_path(&ds.masks, "dataset.masks")?)?),
        None => None,
    };
    let source = match &masks {
        Some(m) => MaskSource::Ingested(m),
        None => MaskSource::Procedural,
    };
    let set = generate_dataset(ds.count, &ds.augment, &op, ds.noise_std, source, cfg.seed)?;
    let options = WriteOptions {
        noise_std: Some(set.noise_std),
        source: Some("dataset".into()),
    };
    write_dataset_with(&set.records, &cfg.out, &options)?;
    if ds.previews {
        let views: Vec<&Array2<f64>> = set.records.iter().map(|r| &r.ground_truth.data).collect();
        save_previews(&views, "truth", ds.preview_db, &cfg.out)?;
    }

    let n = set.records.len();
    let (lo, hi) = set
        .records
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
            (lo.min(r.snr_db), hi.max(r.snr_db))
        });
    let power = set
        .records
        .iter()
        .map(|r| r.ground_truth.data.mapv(|v| v * v).mean().unwrap_or(0.0))
        .sum::<f64>()
        / n as f64;
    let train = parecon::dataset::train_count(n);
    println!("records {n} (train {train}, validation {})", n - train);
    println!("SNR range [{lo:.2}, {hi:.2}] dB");
    println!("mean ground-truth power {power:.9}");
    println!("raw noise std {:.6e}", set.noise_std);
    Ok(())
}

/// PSNR and SSIM between two image sets.
pub fn metrics(cfg: &RunConfig) -> Result<()> {
    let truth = require_path(&cfg.metrics.truth, "metrics.truth")?;
    let estimate = require_path(&cfg.metrics.estimate, "metrics.estimate")?;
    let report = compare_dirs(&truth, &estimate, &cfg.metrics.ssim)?;
    fs::create_dir_all(&cfg.out)?;
    write_report(&report, &cfg.out)
}

/// Uniform noise frame drawn from `seed`, used where no recorded frame is given.
pub fn random_frame(cfg: &RunConfig, seed: u64) -> Result<RawFrame> {
    let geometry = cfg.geometry()?;
    let acq = cfg.acquisition();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = Array2::from_shape_fn((acq.sample_count, geometry.element_count()), |_| {
        rng.random_range(-1.0..1.0)
    });
    Ok(RawFrame::new(data, geometry, acq)?)
}

/// Builds (or finds) the LUT in the cache and optionally writes a golden tensor.
pub fn lut_cache(cfg: &RunConfig) -> Result<()> {
    let lc = &cfg.lut_cache;
    let (grid, frame) = match &lc.input {
        Some(_) => {
            let input = require_path(&lc.input, "lut_cache.input")?;
            let grid = read_manifest(&input)?.grid;
            let mut records = read_dataset(&input)?;
            if lc.record >= records.len() {
                bail!(ConfigError(format!(
                    "`lut_cache.record` {} out of range, the input holds {} records",
                    lc.record,
                    records.len()
                )));
            }
            (grid, records.swap_remove(lc.record).raw)
        }
        None => (cfg.grid(), random_frame(cfg, cfg.seed)?),
    };
    let dir = lc.dir.clone().unwrap_or_else(|| cfg.out.join("lut"));
    let (lut, hit) = DelayLut::load_or_build(&dir, &grid, &frame.geometry, &frame.acquisition)?;
    let key = lut.key();
    println!("key {key}");
    println!(
        "file {}",
        dir.join(DelayLut::cache_file_name(&key)).display()
    );
    println!("{}", if hit { "cache hit" } else { "built and stored" });
    println!(
        "entries {}  nonzeros {}  empty {}",
        grid.pixel_count() * frame.geometry.element_count(),
        lut.nonzeros(),
        lut.empty_entries()
    );
    if let Some(path) = &lc.emit_tensor {
        let tensor = lut.apply(&frame)?;
        write_golden_tensor(path, &frame, &tensor)?;
        println!("golden tensor written to {}", path.display());
    }
    Ok(())
}
