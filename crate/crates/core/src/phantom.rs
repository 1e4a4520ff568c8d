//! Vascular ground truths and paired synthetic datasets.
//!
//! Binary vessel masks come either from user-supplied segmentation images
//! (partitioned, resized, rotated and combined) or from a procedural
//! generator of smooth branching strokes. Masks are turned into absorber
//! images with one random intensity per connected vessel, scaled to a drawn
//! SNR, pushed through the forward model and written as a dataset.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{add_noise, ForwardOperator};
use crate::model::{DatasetRecord, GridSpec, ImageGrid, RawFrame};

/// Binary vessel mask, values 0 or 1.
pub type Mask = Array2<u8>;

pub const MIN_MASK_SIDE: u32 = 64;

// dedicated streams so shape, intensity and noise draws never overlap the
// per-element noise streams 0..J
const SHAPE_STREAM: u64 = u64::MAX;
const INTENSITY_STREAM: u64 = u64::MAX - 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSpec {
    /// Candidate `p` values; a source mask is cut into a `p x p` grid and one cell kept.
    pub partition_sizes: Vec<usize>,
    pub resize_range: [f64; 2],
    /// Degrees.
    pub rotation_range: [f64; 2],
    /// Pieces (ingested) or root strokes (procedural) per image.
    pub combine_count: usize,
    /// Branches spawned per procedural stroke, at most.
    pub max_branches: usize,
    /// dB between the strongest and weakest possible vessel.
    pub vessel_dynamic_range: f64,
    /// dB, peak ground-truth amplitude over noise standard deviation (see
    /// [`generate_dataset`] for the units).
    pub snr_range: [f64; 2],
    /// Metres.
    pub vessel_diameter_range: [f64; 2],
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            partition_sizes: vec![1, 2, 3],
            resize_range: [0.75, 1.5],
            rotation_range: [-180.0, 180.0],
            combine_count: 3,
            max_branches: 2,
            vessel_dynamic_range: 20.0,
            snr_range: [10.0, 35.0],
            vessel_diameter_range: [0.05e-3, 0.3e-3],
        }
    }
}

fn ordered(name: &'static str, r: [f64; 2]) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
        return Err(Error::param(
            name,
            format!("expected finite [low, high], got {r:?}"),
        ));
    }
    Ok(())
}

impl AugmentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.partition_sizes.is_empty() || self.partition_sizes.contains(&0) {
            return Err(Error::param(
                "partition_sizes",
                "need at least one size >= 1",
            ));
        }
        ordered("resize_range", self.resize_range)?;
        if self.resize_range[0] <= 0.0 {
            return Err(Error::param("resize_range", "factors must be > 0"));
        }
        ordered("rotation_range", self.rotation_range)?;
        ordered("snr_range", self.snr_range)?;
        ordered("vessel_diameter_range", self.vessel_diameter_range)?;
        if self.vessel_diameter_range[0] <= 0.0 {
            return Err(Error::param(
                "vessel_diameter_range",
                "diameters must be > 0",
            ));
        }
        if !(self.vessel_dynamic_range >= 0.0 && self.vessel_dynamic_range.is_finite()) {
            return Err(Error::param(
                "vessel_dynamic_range",
                "must be finite and >= 0",
            ));
        }
        Ok(())
    }
}

fn uniform(rng: &mut impl Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

/// Loads one grayscale image and thresholds it at half scale.
pub fn load_mask(path: &Path) -> Result<Mask> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_luma8();
    let (w, h) = img.dimensions();
    if w < MIN_MASK_SIDE || h < MIN_MASK_SIDE {
        return Err(Error::UndersizedImage {
            path: path.to_path_buf(),
            width: w,
            height: h,
        });
    }
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(r, c)| {
        u8::from(img.get_pixel(c as u32, r as u32)[0] >= 128)
    }))
}

/// Masks from a file or from every `.pgm`/`.pnm`/`.png` file of a directory
/// (sorted by name).
pub fn ingest_masks(path: &Path) -> Result<Vec<Mask>> {
    if path.is_file() {
        return Ok(vec![load_mask(path)?]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "pgm" | "pnm" | "png"))
        })
        .collect();
    files.sort();
    files.iter().map(|p| load_mask(p)).collect()
}

struct Canvas<'a> {
    mask: &'a mut Mask,
    z_res: f64,
    x_res: f64,
}

impl Canvas<'_> {
    fn height(&self) -> f64 {
        self.mask.nrows() as f64 * self.z_res
    }

    fn width(&self) -> f64 {
        self.mask.ncols() as f64 * self.x_res
    }

    /// Marks pixels whose centre lies within `radius` of `(z, x)`, plus the
    /// pixel containing the point, so thin strokes never vanish.
    fn dab(&mut self, z: f64, x: f64, radius: f64) {
        let (nz, nx) = self.mask.dim();
        let centre = |v: f64, res: f64| (v / res - 0.5).round();
        let (rc, cc) = (centre(z, self.z_res), centre(x, self.x_res));
        if rc >= 0.0 && cc >= 0.0 && (rc as usize) < nz && (cc as usize) < nx {
            self.mask[[rc as usize, cc as usize]] = 1;
        }
        let span_r = (radius / self.z_res).ceil() as isize + 1;
        let span_c = (radius / self.x_res).ceil() as isize + 1;
        for r in rc as isize - span_r..=rc as isize + span_r {
            for c in cc as isize - span_c..=cc as isize + span_c {
                if r < 0 || c < 0 || r as usize >= nz || c as usize >= nx {
                    continue;
                }
                let dz = (r as f64 + 0.5) * self.z_res - z;
                let dx = (c as f64 + 0.5) * self.x_res - x;
                if dz * dz + dx * dx <= radius * radius {
                    self.mask[[r as usize, c as usize]] = 1;
                }
            }
        }
    }

    fn stroke(
        &mut self,
        rng: &mut ChaCha8Rng,
        start: (f64, f64),
        heading: f64,
        diameter: f64,
        spec: &AugmentSpec,
        branches: usize,
    ) {
        let scale = self.height().min(self.width());
        let length = rng.random_range(0.3..1.0) * (self.height() + self.width()) / 2.0;
        let bend = rng.random_range(0.0..2.0) / scale;
        let period = rng.random_range(0.5..2.0) * scale;
        let phase = rng.random_range(0.0..2.0 * PI);
        let step = self.z_res.min(self.x_res) / 4.0;
        let branch_at: Vec<f64> = (0..branches)
            .map(|_| rng.random_range(0.1..0.9) * length)
            .collect();

        let (mut z, mut x) = start;
        let mut theta = heading;
        let mut s = 0.0;
        let margin = diameter;
        while s < length {
            self.dab(z, x, diameter / 2.0);
            for &b in &branch_at {
                if b >= s && b < s + step {
                    let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    let turn = side * rng.random_range(20f64..60.0).to_radians();
                    let d = uniform(rng, [spec.vessel_diameter_range[0], diameter]);
                    self.stroke(rng, (z, x), theta + turn, d, spec, 0);
                }
            }
            theta += bend * (2.0 * PI * s / period + phase).sin() * step;
            z += step * theta.sin();
            x += step * theta.cos();
            s += step;
            if z < -margin || x < -margin || z > self.height() + margin || x > self.width() + margin
            {
                break;
            }
        }
    }
}

/// Random smooth branching vessel strokes with diameters drawn from the
/// spec's range (metres, rasterized at the grid resolution).
pub fn synthesize_vessels(spec: &AugmentSpec, grid: &GridSpec, seed: u64) -> Mask {
    let mut mask = Array2::zeros(grid.shape());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SHAPE_STREAM);
    let mut canvas = Canvas {
        mask: &mut mask,
        z_res: grid.z_res,
        x_res: grid.x_res,
    };
    for _ in 0..spec.combine_count {
        let start = (
            rng.random_range(0.0..canvas.height()),
            rng.random_range(0.0..canvas.width()),
        );
        let heading = rng.random_range(0.0..2.0 * PI);
        let diameter = uniform(&mut rng, spec.vessel_diameter_range);
        let branches = rng.random_range(0..=spec.max_branches);
        canvas.stroke(&mut rng, start, heading, diameter, spec, branches);
    }
    mask
}

/// Bilinear sample of a 0/1 mask (zero outside).
fn sample(mask: &Mask, r: f64, c: f64) -> f64 {
    let (nz, nx) = mask.dim();
    let (r0, c0) = (r.floor(), c.floor());
    let (fr, fc) = (r - r0, c - c0);
    let at = |r: f64, c: f64| {
        if r < 0.0 || c < 0.0 || r as usize >= nz || c as usize >= nx {
            0.0
        } else {
            f64::from(mask[[r as usize, c as usize]])
        }
    };
    at(r0, c0) * (1.0 - fr) * (1.0 - fc)
        + at(r0, c0 + 1.0) * (1.0 - fr) * fc
        + at(r0 + 1.0, c0) * fr * (1.0 - fc)
        + at(r0 + 1.0, c0 + 1.0) * fr * fc
}

/// Scales by `factor` and rotates by `degrees` about the centre, with
/// bilinear resampling and re-thresholding at 0.5.
pub fn resize_rotate(mask: &Mask, factor: f64, degrees: f64) -> Mask {
    let (h, w) = (mask.nrows() as f64, mask.ncols() as f64);
    let (sin, cos) = degrees.to_radians().sin_cos();
    // the tolerance keeps exact quarter turns from gaining a row to rounding
    let side = |v: f64| (v * factor - 1e-9).ceil().max(1.0) as usize;
    let out_h = side(h * cos.abs() + w * sin.abs());
    let out_w = side(h * sin.abs() + w * cos.abs());
    let (ch, cw) = ((h - 1.0) / 2.0, (w - 1.0) / 2.0);
    let (oh, ow) = ((out_h as f64 - 1.0) / 2.0, (out_w as f64 - 1.0) / 2.0);
    Array2::from_shape_fn((out_h, out_w), |(r, c)| {
        let (dr, dc) = ((r as f64 - oh) / factor, (c as f64 - ow) / factor);
        // inverse rotation
        let sr = cos * dr + sin * dc + ch;
        let sc = -sin * dr + cos * dc + cw;
        u8::from(sample(mask, sr, sc) >= 0.5)
    })
}

/// Partition, resize, rotate and combine randomly chosen source masks into
/// one mask of `shape`.
pub fn augment_masks(
    sources: &[Mask],
    spec: &AugmentSpec,
    shape: (usize, usize),
    seed: u64,
) -> Mask {
    let mut out = Array2::zeros(shape);
    if sources.is_empty() {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SHAPE_STREAM);
    for _ in 0..spec.combine_count {
        let src = &sources[rng.random_range(0..sources.len())];
        let p = spec.partition_sizes[rng.random_range(0..spec.partition_sizes.len())];
        let (ph, pw) = ((src.nrows() / p).max(1), (src.ncols() / p).max(1));
        let (i, j) = (rng.random_range(0..p), rng.random_range(0..p));
        let cell = src.slice(ndarray::s![
            (i * ph).min(src.nrows() - 1)..((i + 1) * ph).min(src.nrows()),
            (j * pw).min(src.ncols() - 1)..((j + 1) * pw).min(src.ncols())
        ]);
        let factor = uniform(&mut rng, spec.resize_range);
        let angle = uniform(&mut rng, spec.rotation_range);
        let piece = resize_rotate(&cell.to_owned(), factor, angle);
        let (h, w) = piece.dim();
        // offsets let up to half of the piece hang over any edge
        let r0 = rng.random_range(-(h as i64) / 2..=(shape.0 as i64 - h as i64 / 2).max(0));
        let c0 = rng.random_range(-(w as i64) / 2..=(shape.1 as i64 - w as i64 / 2).max(0));
        for ((r, c), &v) in piece.indexed_iter() {
            let (tr, tc) = (r0 + r as i64, c0 + c as i64);
            if v == 1 && tr >= 0 && tc >= 0 && (tr as usize) < shape.0 && (tc as usize) < shape.1 {
                out[[tr as usize, tc as usize]] = 1;
            }
        }
    }
    out
}

/// 8-connected component labels (0 = background, 1..=count) and the count.
pub fn connected_components(mask: &Mask) -> (Array2<u32>, u32) {
    let (nz, nx) = mask.dim();
    let mut labels = Array2::zeros((nz, nx));
    let mut count = 0;
    let mut queue = VecDeque::new();
    for start in 0..nz * nx {
        let (r, c) = (start / nx, start % nx);
        if mask[[r, c]] == 0 || labels[[r, c]] != 0 {
            continue;
        }
        count += 1;
        labels[[r, c]] = count;
        queue.push_back((r, c));
        while let Some((r, c)) = queue.pop_front() {
            for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    let (rr, cc) = (r as isize + dr, c as isize + dc);
                    if rr < 0 || cc < 0 || rr as usize >= nz || cc as usize >= nx {
                        continue;
                    }
                    let (rr, cc) = (rr as usize, cc as usize);
                    if mask[[rr, cc]] != 0 && labels[[rr, cc]] == 0 {
                        labels[[rr, cc]] = count;
                        queue.push_back((rr, cc));
                    }
                }
            }
        }
    }
    (labels, count)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grayscale {
    /// Per-vessel intensities in `[10^(-DR/20), 1]`.
    pub image: Array2<f64>,
    pub snr_db: f64,
    /// Target ground-truth peak, `noise_std * 10^(snr/20)`.
    pub amplitude: f64,
}

pub fn grayscale_and_scale(
    mask: &Mask,
    spec: &AugmentSpec,
    noise_std: f64,
    seed: u64,
) -> Grayscale {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(INTENSITY_STREAM);
    let (labels, count) = connected_components(mask);
    let floor = 10f64.powf(-spec.vessel_dynamic_range / 20.0);
    let intensities: Vec<f64> = (0..count)
        .map(|_| uniform(&mut rng, [floor, 1.0]))
        .collect();
    let image = labels.mapv(|l| {
        if l == 0 {
            0.0
        } else {
            intensities[l as usize - 1]
        }
    });
    let snr_db = uniform(&mut rng, spec.snr_range);
    Grayscale {
        image,
        snr_db,
        amplitude: noise_std * 10f64.powf(snr_db / 20.0),
    }
}

/// Where vessel shapes come from.
#[derive(Debug, Clone, Copy)]
pub enum MaskSource<'a> {
    Procedural,
    Ingested(&'a [Mask]),
}

/// A generated set before it is written to disk.
#[derive(Debug, Clone)]
pub struct GeneratedSet {
    pub records: Vec<DatasetRecord>,
    /// Noise standard deviation of the stored (normalized) raw frames.
    pub noise_std: f64,
    /// Raw peak produced by a unit point source at the grid centre; ground
    /// truths are expressed in these raw-signal units.
    pub reference_gain: f64,
}

/// Per-record seeds derived from the master seed.
pub fn record_seeds(master: u64, count: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    (0..count).map(|_| rng.next_u64()).collect()
}

/// Generates `count` paired records.
///
/// Each image's brightest vessel is scaled to `noise_std * 10^(snr/20)` in
/// raw-signal units, i.e. a unit point source at the grid centre produces a
/// raw peak of `reference_gain` and the stored truth is divided by it. Using
/// a fixed reference rather than each record's own raw peak keeps shallow
/// vessels (whose `1/R` spreading gain is huge) from setting the noise
/// level of the whole image. The set is then rescaled so the mean
/// ground-truth power is 1.
pub fn generate_dataset(
    count: usize,
    spec: &AugmentSpec,
    operator: &ForwardOperator,
    noise_std: f64,
    source: MaskSource<'_>,
    master_seed: u64,
) -> Result<GeneratedSet> {
    spec.validate()?;
    if count == 0 {
        return Err(Error::param("count", "must be >= 1"));
    }
    if !(noise_std > 0.0 && noise_std.is_finite()) {
        return Err(Error::param("noise_std", "must be > 0 to define an SNR"));
    }
    let grid = *operator.grid();
    let mut probe = Array2::zeros(grid.shape());
    probe[[grid.nz / 2, grid.nx / 2]] = 1.0;
    let reference_gain = operator
        .apply(&probe)?
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if !(reference_gain > 0.0) {
        return Err(Error::Numerical(
            "centre point source produces no signal inside the recording window".into(),
        ));
    }
    let seeds = record_seeds(master_seed, count);
    let drafts: Vec<(Array2<f64>, Array2<f64>, f64)> = seeds
        .par_iter()
        .map(|&seed| {
            let mask = match source {
                MaskSource::Procedural => synthesize_vessels(spec, &grid, seed),
                MaskSource::Ingested(masks) => augment_masks(masks, spec, grid.shape(), seed),
            };
            let gray = grayscale_and_scale(&mask, spec, noise_std, seed);
            let brightest = gray.image.iter().fold(0.0f64, |m, &v| m.max(v));
            let truth = if brightest > 0.0 {
                gray.image * (gray.amplitude / (brightest * reference_gain))
            } else {
                gray.image
            };
            let mut raw = operator.apply(&truth)?;
            add_noise(&mut raw, noise_std, seed);
            Ok((truth, raw, gray.snr_db))
        })
        .collect::<Result<_>>()?;

    let power = drafts
        .iter()
        .map(|(t, ..)| t.iter().map(|v| v * v).sum::<f64>() / t.len() as f64)
        .sum::<f64>()
        / count as f64;
    let c = if power > 0.0 { 1.0 / power.sqrt() } else { 1.0 };
    let records = drafts
        .into_iter()
        .zip(&seeds)
        .map(|((truth, raw, snr_db), &seed)| DatasetRecord {
            ground_truth: ImageGrid {
                data: truth * c,
                grid,
            },
            raw: RawFrame {
                data: raw * c,
                geometry: operator.geometry().clone(),
                acquisition: *operator.acquisition(),
            },
            snr_db,
            seed,
        })
        .collect();
    Ok(GeneratedSet {
        records,
        noise_std: noise_std * c,
        reference_gain,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> GridSpec {
        GridSpec::centered(64, 64, 0.05e-3, 0.05e-3)
    }

    #[test]
    fn synthesis_is_deterministic() {
        let spec = AugmentSpec::default();
        assert_eq!(
            synthesize_vessels(&spec, &grid(), 4),
            synthesize_vessels(&spec, &grid(), 4)
        );
        assert_ne!(
            synthesize_vessels(&spec, &grid(), 4),
            synthesize_vessels(&spec, &grid(), 5)
        );
    }

    #[test]
    fn zero_combine_count_is_empty() {
        let spec = AugmentSpec {
            combine_count: 0,
            ..Default::default()
        };
        assert!(synthesize_vessels(&spec, &grid(), 1)
            .iter()
            .all(|&v| v == 0));
        assert!(augment_masks(&[Array2::ones((64, 64))], &spec, (32, 32), 1)
            .iter()
            .all(|&v| v == 0));
    }

    #[test]
    fn components_are_eight_connected() {
        let mut m = Array2::zeros((5, 5));
        m[[0, 0]] = 1;
        m[[1, 1]] = 1;
        m[[4, 4]] = 1;
        let (labels, n) = connected_components(&m);
        assert_eq!(n, 2);
        assert_eq!(labels[[0, 0]], labels[[1, 1]]);
        assert_ne!(labels[[0, 0]], labels[[4, 4]]);
    }

    #[test]
    fn zero_dynamic_range_gives_unit_intensity() {
        let spec = AugmentSpec {
            vessel_dynamic_range: 0.0,
            ..Default::default()
        };
        let mask = synthesize_vessels(&spec, &grid(), 2);
        let g = grayscale_and_scale(&mask, &spec, 1.0, 2);
        assert!(g.image.iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn collapsed_snr_range() {
        let spec = AugmentSpec {
            snr_range: [20.0, 20.0],
            ..Default::default()
        };
        let g = grayscale_and_scale(&Array2::zeros((4, 4)), &spec, 0.5, 0);
        assert_eq!(g.snr_db, 20.0);
        assert!((g.amplitude / 0.5 - 10.0).abs() < 1e-12);
    }

    #[test]
    fn identity_transform_keeps_mask() {
        let m = Array2::from_shape_fn((9, 7), |(r, c)| u8::from((r + c) % 3 == 0));
        assert_eq!(resize_rotate(&m, 1.0, 0.0), m);
        let doubled = resize_rotate(&m, 2.0, 0.0);
        assert_eq!(doubled.dim(), (18, 14));
    }

    #[test]
    fn quarter_turn_transposes_orientation() {
        let mut m = Array2::zeros((5, 9));
        m.row_mut(2).fill(1);
        let r = resize_rotate(&m, 1.0, 90.0);
        assert_eq!(r.dim(), (9, 5));
        assert_eq!(r.column(2).iter().filter(|&&v| v == 1).count(), 9);
        assert_eq!(r.iter().filter(|&&v| v == 1).count(), 9);
    }
}
