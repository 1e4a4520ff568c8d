//! Classical reconstructions on the delay tensor.

mod das;
mod dmas;
mod mv;

pub use das::{das, Apodization, DasConfig};
pub use dmas::{dmas, dmas_pixel, dmas_prefilter, DmasConfig, PairMode};
pub use mv::{minimum_variance, mv_weights, subarray_covariance, MvConfig, MvOutput};

use std::ops::Range;

use ndarray::ArrayView1;

use crate::model::{DelayTensor, GridSpec};

/// Channel vector of pixel `(row, col)`.
pub(crate) fn channels(tensor: &DelayTensor, row: usize, col: usize) -> ArrayView1<'_, f64> {
    tensor.data.slice(ndarray::s![row, col, ..])
}

/// Channels with `|x - x_j| <= z / (2 f#)` for pixel `(row, col)`; the whole
/// array when `f_number` is 0. Element positions ascend, so the active set
/// is one contiguous run (possibly empty).
pub(crate) fn aperture(
    positions: &[f64],
    grid: &GridSpec,
    row: usize,
    col: usize,
    f_number: f64,
) -> Range<usize> {
    if f_number == 0.0 {
        return 0..positions.len();
    }
    let half_width = grid.z(row) / (2.0 * f_number);
    let x = grid.x(col);
    let lo = positions.partition_point(|&p| p < x - half_width);
    let hi = positions.partition_point(|&p| p <= x + half_width);
    lo..hi.max(lo)
}
