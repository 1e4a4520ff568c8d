use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DelayTensor, ImageGrid};
use crate::signal::{self, Butterworth};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairMode {
    /// Every pair `j1 < j2` once, no self-products.
    #[default]
    UnorderedDistinct,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DmasConfig {
    /// Hz, in the axial (depth) frequency domain.
    pub highpass_cutoff: f64,
    pub filter_order: usize,
    pub pair_mode: PairMode,
    /// Receive aperture as for DAS; 0 selects the full array.
    pub f_number: f64,
}

impl Default for DmasConfig {
    fn default() -> Self {
        Self {
            highpass_cutoff: 6e6,
            filter_order: 6,
            pair_mode: PairMode::UnorderedDistinct,
            f_number: 0.0,
        }
    }
}

impl DmasConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.highpass_cutoff > 0.0) {
            return Err(Error::param("highpass_cutoff", "must be > 0"));
        }
        if self.filter_order == 0 {
            return Err(Error::param("filter_order", "must be >= 1"));
        }
        if !(self.f_number >= 0.0 && self.f_number.is_finite()) {
            return Err(Error::param("f_number", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// `sum_{j1 < j2} sign(f1 f2) sqrt(|f1 f2|)` in O(J): the summand factors
/// as `g1 g2` with `g = sign(f) sqrt(|f|)`, so a running suffix sum suffices.
pub fn dmas_pixel(f: &[f64]) -> f64 {
    let mut suffix = 0.0;
    let mut total = 0.0;
    for &v in f.iter().rev() {
        let g = v.signum() * v.abs().sqrt();
        total += g * suffix;
        suffix += g;
    }
    total
}

/// DMAS image before filtering and envelope detection, divided by the
/// number of pairs in each pixel's aperture.
pub fn dmas_prefilter(tensor: &DelayTensor, f_number: f64) -> Array2<f64> {
    let grid = tensor.grid;
    let positions = tensor.geometry.element_positions();
    let mut image = Array2::zeros(grid.shape());
    image
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(row, mut out)| {
            for (col, o) in out.iter_mut().enumerate() {
                let active = super::aperture(positions, &grid, row, col, f_number);
                let n = active.len();
                if n < 2 {
                    continue;
                }
                let f = super::channels(tensor, row, col);
                let f = f.slice(ndarray::s![active]);
                let sum = match f.as_slice() {
                    Some(s) => dmas_pixel(s),
                    None => dmas_pixel(&f.to_vec()),
                };
                *o = sum / (n * (n - 1) / 2) as f64;
            }
        });
    image
}

/// Delay-multiply-and-sum with zero-phase axial high-pass and envelope.
/// The axial sampling rate is `c / z_res` (one-way delays).
pub fn dmas(tensor: &DelayTensor, cfg: &DmasConfig) -> Result<ImageGrid> {
    cfg.validate()?;
    let grid = tensor.grid;
    let axial_rate = tensor.geometry.sound_speed() / grid.z_res;
    let filter = Butterworth::highpass(cfg.filter_order, cfg.highpass_cutoff, axial_rate)?;
    let mut image = dmas_prefilter(tensor, cfg.f_number);
    for col in image.axis_iter_mut(Axis(1)) {
        filter.filtfilt_in_place(col);
    }
    Ok(ImageGrid {
        data: signal::axial_envelope(&image),
        grid,
    })
}
