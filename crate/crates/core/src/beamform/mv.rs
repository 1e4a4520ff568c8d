//! Minimum-variance (Capon) beamforming with subarray and axial averaging.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DelayTensor, ImageGrid};
use crate::signal;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MvConfig {
    pub subarray_length: usize,
    /// Half-width `N` of the axial averaging window (`2N + 1` samples).
    pub axial_averages: usize,
    /// Diagonal loading as a fraction of `trace(R) / L`.
    pub diagonal_loading: f64,
    /// Receive aperture as for DAS; 0 selects the full array. Near the
    /// surface the subarray is clipped to the active channels.
    pub f_number: f64,
    pub apply_hilbert: bool,
}

impl Default for MvConfig {
    fn default() -> Self {
        Self {
            subarray_length: 32,
            axial_averages: 2,
            diagonal_loading: 1e-2,
            f_number: 0.5,
            apply_hilbert: true,
        }
    }
}

impl MvConfig {
    pub fn validate(&self, element_count: usize) -> Result<()> {
        if self.subarray_length == 0 || self.subarray_length > element_count {
            return Err(Error::param(
                "subarray_length",
                format!("must lie in 1..={element_count}"),
            ));
        }
        if !(self.diagonal_loading >= 0.0 && self.diagonal_loading.is_finite()) {
            return Err(Error::param("diagonal_loading", "must be finite and >= 0"));
        }
        if !(self.f_number >= 0.0 && self.f_number.is_finite()) {
            return Err(Error::param("f_number", "must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MvOutput {
    pub image: ImageGrid,
    /// `1^T w` of every pixel, kept as a unity-gain diagnostic.
    pub weight_sums: Array2<f64>,
    /// Pixels whose covariance could not be inverted; they use uniform weights.
    pub fallbacks: usize,
}

/// Active channels of pixel `(row, col)`; never empty, an empty f-number
/// aperture shrinks to the element nearest the pixel.
fn active_channels(tensor: &DelayTensor, row: usize, col: usize, f_number: f64) -> Range<usize> {
    let positions = tensor.geometry.element_positions();
    let active = super::aperture(positions, &tensor.grid, row, col, f_number);
    if !active.is_empty() {
        return active;
    }
    let x = tensor.grid.x(col);
    let nearest = (0..positions.len())
        .min_by(|&a, &b| {
            (positions[a] - x)
                .abs()
                .total_cmp(&(positions[b] - x).abs())
        })
        .expect("at least two elements");
    nearest..nearest + 1
}

/// Covariance over subarrays of length `l` inside `channels`, averaged
/// over the axial window. Rows outside the image shorten the window.
fn covariance_over(
    tensor: &DelayTensor,
    row: usize,
    col: usize,
    channels: Range<usize>,
    l: usize,
    axial_averages: usize,
) -> DMatrix<f64> {
    let m = channels.len() - l + 1;
    let first = row.saturating_sub(axial_averages);
    let last = (row + axial_averages).min(tensor.grid.nz - 1);
    let mut r = DMatrix::zeros(l, l);
    for n in first..=last {
        let full = super::channels(tensor, n, col);
        let f = full.slice(ndarray::s![channels.clone()]);
        // first row directly, then slide along each diagonal d:
        // C[a][a+d] = C[a-1][a-1+d] - f[a-1] f[a-1+d] + f[a+m-1] f[a+m-1+d]
        for d in 0..l {
            let mut c = 0.0;
            for k in 0..m {
                c += f[k] * f[k + d];
            }
            r[(0, d)] += c;
            for a in 1..l - d {
                c += f[a + m - 1] * f[a + m - 1 + d] - f[a - 1] * f[a - 1 + d];
                r[(a, a + d)] += c;
            }
        }
    }
    let norm = ((last - first + 1) * m) as f64;
    for a in 0..l {
        for b in a..l {
            let v = r[(a, b)] / norm;
            r[(a, b)] = v;
            r[(b, a)] = v;
        }
    }
    r
}

/// Subarray- and axially-averaged covariance of pixel `(row, col)` within
/// its receive aperture.
pub fn subarray_covariance(
    tensor: &DelayTensor,
    row: usize,
    col: usize,
    cfg: &MvConfig,
) -> DMatrix<f64> {
    let channels = active_channels(tensor, row, col, cfg.f_number);
    let l = cfg.subarray_length.min(channels.len());
    covariance_over(tensor, row, col, channels, l, cfg.axial_averages)
}

/// `R^-1 1 / (1^T R^-1 1)` after adding `loading * trace(R) / L` to the
/// diagonal; `None` when the loaded matrix is not positive definite.
pub fn mv_weights(covariance: &DMatrix<f64>, loading: f64) -> Option<DVector<f64>> {
    let l = covariance.nrows();
    let mut r = covariance.clone();
    let boost = loading * r.trace() / l as f64;
    for a in 0..l {
        r[(a, a)] += boost;
    }
    let chol = r.cholesky()?;
    let v = chol.solve(&DVector::from_element(l, 1.0));
    let denom = v.sum();
    if !(denom > 0.0 && denom.is_finite()) {
        return None;
    }
    Some(v / denom)
}

/// Minimum-variance beamformer.
pub fn minimum_variance(tensor: &DelayTensor, cfg: &MvConfig) -> Result<MvOutput> {
    cfg.validate(tensor.channel_count())?;
    let grid = tensor.grid;
    let mut image = Array2::zeros(grid.shape());
    let mut weight_sums = Array2::zeros(grid.shape());
    let fallbacks: usize = image
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(weight_sums.axis_iter_mut(Axis(0)).into_par_iter())
        .enumerate()
        .map(|(row, (mut out, mut sums))| {
            let mut failed = 0;
            for col in 0..grid.nx {
                let channels = active_channels(tensor, row, col, cfg.f_number);
                let l = cfg.subarray_length.min(channels.len());
                let m = channels.len() - l + 1;
                let f = super::channels(tensor, row, col);
                let averaged: Vec<f64> = (0..l)
                    .map(|a| {
                        let s = channels.start + a;
                        f.slice(ndarray::s![s..s + m]).sum() / m as f64
                    })
                    .collect();
                let cov = covariance_over(tensor, row, col, channels, l, cfg.axial_averages);
                let w = mv_weights(&cov, cfg.diagonal_loading).unwrap_or_else(|| {
                    failed += 1;
                    DVector::from_element(l, 1.0 / l as f64)
                });
                out[col] = w.iter().zip(&averaged).map(|(w, v)| w * v).sum();
                sums[col] = w.sum();
            }
            failed
        })
        .sum();
    if fallbacks > 0 {
        log::warn!("minimum variance: {fallbacks} pixels fell back to uniform weights");
    }
    let data = if cfg.apply_hilbert {
        signal::axial_envelope(&image)
    } else {
        image
    };
    Ok(MvOutput {
        image: ImageGrid { data, grid },
        weight_sums,
        fallbacks,
    })
}
