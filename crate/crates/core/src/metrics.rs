//! Image-quality metrics and block-Hankel rank diagnostics.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset;
use crate::error::{Error, Result};
use crate::model::DelayTensor;

fn check_shapes(a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", a.dim()),
            found: format!("{:?}", b.dim()),
        });
    }
    Ok(())
}

/// `10 log10(n1 n2 I_max^2 / ||s - s_hat||_F^2)`; `+inf` for identical images.
pub fn psnr(truth: &Array2<f64>, estimate: &Array2<f64>, i_max: f64) -> Result<f64> {
    check_shapes(truth, estimate)?;
    if !(i_max > 0.0) {
        return Err(Error::param("i_max", "must be > 0"));
    }
    let err: f64 = truth
        .iter()
        .zip(estimate.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (truth.len() as f64 * i_max * i_max / err).log10())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SsimWindow {
    /// One window covering the whole image.
    Global,
    /// Mean over all fully-contained square windows of this side.
    Sliding(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsimParams {
    pub c1: f64,
    pub c2: f64,
    pub window: SsimWindow,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            c1: 0.01 * 0.01,
            c2: 0.03 * 0.03,
            window: SsimWindow::Global,
        }
    }
}

fn ssim_stats<'a>(
    a: impl Iterator<Item = &'a f64> + Clone,
    b: impl Iterator<Item = &'a f64> + Clone,
    c1: f64,
    c2: f64,
) -> f64 {
    let n = a.clone().count() as f64;
    let mu_a = a.clone().sum::<f64>() / n;
    let mu_b = b.clone().sum::<f64>() / n;
    let (mut var_a, mut var_b, mut cov) = (0.0, 0.0, 0.0);
    for (x, y) in a.zip(b) {
        let (dx, dy) = (x - mu_a, y - mu_b);
        var_a += dx * dx;
        var_b += dy * dy;
        cov += dx * dy;
    }
    let (var_a, var_b, cov) = (var_a / n, var_b / n, cov / n);
    ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
        / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2))
}

pub fn ssim(truth: &Array2<f64>, estimate: &Array2<f64>, params: &SsimParams) -> Result<f64> {
    check_shapes(truth, estimate)?;
    match params.window {
        SsimWindow::Global => Ok(ssim_stats(
            truth.iter(),
            estimate.iter(),
            params.c1,
            params.c2,
        )),
        SsimWindow::Sliding(w) => {
            let (nz, nx) = truth.dim();
            if w == 0 || w > nz || w > nx {
                return Err(Error::param(
                    "window",
                    format!("{w} does not fit a {nz}x{nx} image"),
                ));
            }
            let mut total = 0.0;
            let mut count = 0usize;
            for r in 0..=nz - w {
                for c in 0..=nx - w {
                    let s = ndarray::s![r..r + w, c..c + w];
                    let (a, b) = (truth.slice(s), estimate.slice(s));
                    total += ssim_stats(a.iter(), b.iter(), params.c1, params.c2);
                    count += 1;
                }
            }
            Ok(total / count as f64)
        }
    }
}

/// Scales `image` (by magnitude) to unit peak; all-zero images stay zero.
pub fn normalize_peak(image: &Array2<f64>) -> Array2<f64> {
    let peak = image.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        image.mapv(f64::abs)
    } else {
        image.mapv(|v| v.abs() / peak)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comparison {
    pub psnr: f64,
    pub ssim: f64,
}

/// PSNR (`I_max = 1`) and SSIM after normalizing both images to unit peak.
pub fn compare(
    truth: &Array2<f64>,
    estimate: &Array2<f64>,
    params: &SsimParams,
) -> Result<Comparison> {
    let t = normalize_peak(truth);
    let e = normalize_peak(estimate);
    Ok(Comparison {
        psnr: psnr(&t, &e, 1.0)?,
        ssim: ssim(&t, &e, params)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchReport {
    pub rows: Vec<Comparison>,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl BatchReport {
    pub fn psnr_stats(&self) -> (f64, f64) {
        mean_std(self.rows.iter().map(|r| r.psnr))
    }

    pub fn ssim_stats(&self) -> (f64, f64) {
        mean_std(self.rows.iter().map(|r| r.ssim))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("record,psnr_db,ssim\n");
        for (i, r) in self.rows.iter().enumerate() {
            writeln!(out, "{i},{},{}", r.psnr, r.ssim).unwrap();
        }
        let (pm, ps) = self.psnr_stats();
        let (sm, ss) = self.ssim_stats();
        writeln!(out, "mean,{pm},{sm}").unwrap();
        writeln!(out, "std,{ps},{ss}").unwrap();
        out
    }
}

/// Compares two image-set directories record by record.
pub fn compare_dirs(
    truth_dir: &Path,
    estimate_dir: &Path,
    params: &SsimParams,
) -> Result<BatchReport> {
    let (_, truths) = dataset::read_images(truth_dir)?;
    let (_, estimates) = dataset::read_images(estimate_dir)?;
    if truths.len() != estimates.len() {
        return Err(Error::Manifest(format!(
            "{} truth records but {} estimates",
            truths.len(),
            estimates.len()
        )));
    }
    if truths.is_empty() {
        return Err(Error::Manifest("no records to compare".into()));
    }
    let rows = truths
        .iter()
        .zip(&estimates)
        .map(|(t, e)| compare(&t.data, &e.data, params))
        .collect::<Result<_>>()?;
    Ok(BatchReport { rows })
}

/// Window sizes of the periodic block-Hankel lifting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HankelSpec {
    pub d1: usize,
    pub d2: usize,
}

/// Largest tensor accepted by [`block_hankel`], `(N, M, J)`.
pub const HANKEL_LIMIT: (usize, usize, usize) = (32, 32, 8);

/// Periodic block-Hankel matrix of shape `NM x d1 d2 J`: row `m N + l`,
/// column `j d1 d2 + c d1 + k` holds `F[(l + k) mod N, (m + c) mod M, j]`.
pub fn block_hankel(tensor: &DelayTensor, spec: HankelSpec) -> Result<DMatrix<f64>> {
    let (n, m, j) = tensor.data.dim();
    if n > HANKEL_LIMIT.0 || m > HANKEL_LIMIT.1 || j > HANKEL_LIMIT.2 {
        return Err(Error::param(
            "tensor",
            format!("{n}x{m}x{j} exceeds the {HANKEL_LIMIT:?} Hankel guardrail"),
        ));
    }
    if spec.d1 == 0 || spec.d1 > n {
        return Err(Error::param("d1", format!("must lie in 1..={n}")));
    }
    if spec.d2 == 0 || spec.d2 > m {
        return Err(Error::param("d2", format!("must lie in 1..={m}")));
    }
    let (d1, d2) = (spec.d1, spec.d2);
    Ok(DMatrix::from_fn(n * m, d1 * d2 * j, |row, col| {
        let (mb, l) = (row / n, row % n);
        let (jj, rest) = (col / (d1 * d2), col % (d1 * d2));
        let (c, k) = (rest / d1, rest % d1);
        tensor.data[[(l + k) % n, (mb + c) % m, jj]]
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankProfile {
    /// Descending singular values.
    pub singular_values: Vec<f64>,
    /// Count of singular values above `tol * max`.
    pub rank: usize,
}

pub fn hankel_rank_profile(
    tensor: &DelayTensor,
    spec: HankelSpec,
    tol: f64,
) -> Result<RankProfile> {
    let h = block_hankel(tensor, spec)?;
    let mut singular_values: Vec<f64> = h.singular_values().iter().copied().collect();
    singular_values.sort_by(|a, b| b.total_cmp(a));
    let top = singular_values.first().copied().unwrap_or(0.0);
    let rank = if top == 0.0 {
        0
    } else {
        singular_values.iter().filter(|&&s| s > tol * top).count()
    };
    Ok(RankProfile {
        singular_values,
        rank,
    })
}
