use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DelayTensor, ImageGrid};
use crate::signal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Apodization {
    #[default]
    Rectangular,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DasConfig {
    /// Depth over active aperture width; 0 selects the full aperture.
    pub f_number: f64,
    pub apodization: Apodization,
    pub apply_hilbert: bool,
}

impl Default for DasConfig {
    fn default() -> Self {
        Self {
            f_number: 0.5,
            apodization: Apodization::Rectangular,
            apply_hilbert: true,
        }
    }
}

impl DasConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.f_number >= 0.0 && self.f_number.is_finite()) {
            return Err(Error::param("f_number", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Delay-and-sum: mean over the channels inside the f-number aperture of
/// each pixel, optionally followed by the axial envelope.
pub fn das(tensor: &DelayTensor, cfg: &DasConfig) -> Result<ImageGrid> {
    cfg.validate()?;
    let grid = tensor.grid;
    let positions = tensor.geometry.element_positions();
    let mut image = Array2::zeros(grid.shape());
    image
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(row, mut out)| {
            for (col, o) in out.iter_mut().enumerate() {
                let active = super::aperture(positions, &grid, row, col, cfg.f_number);
                if !active.is_empty() {
                    let f = super::channels(tensor, row, col);
                    let n = active.len();
                    *o = f.slice(ndarray::s![active]).sum() / n as f64;
                }
            }
        });
    if cfg.apply_hilbert {
        image = signal::axial_envelope(&image);
    }
    Ok(ImageGrid { data: image, grid })
}
