//! Discrete photoacoustic forward operator and its exact transpose.
//!
//! Each source pixel deposits `scale * D(theta) * a / R` at the one-way time
//! of flight `R / v_s` of every element, split between the two neighbouring
//! samples by linear interpolation. Each element trace is then optionally
//! differentiated (central difference), convolved with the system impulse
//! response and corrupted with white Gaussian noise.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AcquisitionParams, ArrayGeometry, GridSpec, ImageGrid, RawFrame};
use crate::signal;

const EMPTY: u32 = u32::MAX;

/// Element directivity `sin(u) / u` with `u = pi * pitch / wavelength * sin(theta)`.
pub fn directivity(theta: f64, pitch: f64, wavelength: f64) -> f64 {
    sinc_gain(PI * pitch / wavelength * theta.sin())
}

#[inline]
fn sinc_gain(u: f64) -> f64 {
    if u.abs() < 1e-12 {
        1.0
    } else {
        u.sin() / u
    }
}

/// System impulse response `h(t)` sampled at the acquisition rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpulseResponse {
    taps: Vec<f64>,
    sampling_rate: f64,
}

impl ImpulseResponse {
    pub fn new(taps: Vec<f64>, sampling_rate: f64) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::param(
                "taps",
                "impulse response needs at least one tap",
            ));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("impulse response"));
        }
        if taps.iter().map(|t| t * t).sum::<f64>() <= 0.0 {
            return Err(Error::param("taps", "impulse response has zero energy"));
        }
        if !(sampling_rate > 0.0 && sampling_rate.is_finite()) {
            return Err(Error::param("sampling_rate", "must be positive"));
        }
        Ok(Self {
            taps,
            sampling_rate,
        })
    }

    /// Single unit tap.
    pub fn identity(sampling_rate: f64) -> Self {
        Self {
            taps: vec![1.0],
            sampling_rate,
        }
    }

    /// Gaussian-enveloped cosine with the given centre frequency and full
    /// -3 dB bandwidth, truncated at four standard deviations.
    pub fn gaussian_pulse(
        center_frequency: f64,
        bandwidth: f64,
        sampling_rate: f64,
    ) -> Result<Self> {
        if !(bandwidth > 0.0 && center_frequency > 0.0) {
            return Err(Error::param("bandwidth", "must be positive"));
        }
        // |H(f)| = exp(-(2 pi (f - fc) sigma)^2 / 2) drops by 3 dB at f - fc = B / 2
        let sigma = (2f64.ln()).sqrt() / (PI * bandwidth);
        let half = (4.0 * sigma * sampling_rate).ceil() as i64;
        let taps = (-half..=half)
            .map(|m| {
                let t = m as f64 / sampling_rate;
                (-t * t / (2.0 * sigma * sigma)).exp() * (2.0 * PI * center_frequency * t).cos()
            })
            .collect();
        Self::new(taps, sampling_rate)
    }

    /// Built-in probe model: 15.63 MHz centre, 8 MHz -3 dB bandwidth.
    pub fn default_probe(sampling_rate: f64) -> Self {
        Self::gaussian_pulse(15.63e6, 8e6, sampling_rate).expect("valid default pulse")
    }

    /// Parses one tap per line; blank lines and `#` comments are skipped.
    pub fn from_text(text: &str, sampling_rate: f64) -> Result<Self> {
        let taps = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| {
                l.parse::<f64>()
                    .map_err(|e| Error::param("taps", format!("cannot parse `{l}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(taps, sampling_rate)
    }

    pub fn load(path: &Path, sampling_rate: f64) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, sampling_rate)
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn sampling_rate(&self) -> f64 {
        self.sampling_rate
    }

    /// Index of the largest-magnitude tap; it maps to zero lag.
    pub fn peak_index(&self) -> usize {
        self.taps
            .iter()
            .enumerate()
            .fold((0, -1.0), |(bi, bv), (i, &t)| {
                if t.abs() > bv {
                    (i, t.abs())
                } else {
                    (bi, bv)
                }
            })
            .0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForwardConfig {
    pub use_derivative: bool,
    pub use_directivity: bool,
    pub noise_std: f64,
    /// Lumped `Gamma / (4 pi v_s^2)` and unit conversions.
    pub grueneisen_scale: f64,
}

impl Default for ForwardConfig {
    fn default() -> Self {
        Self {
            use_derivative: true,
            use_directivity: true,
            noise_std: 0.0,
            grueneisen_scale: 1e-3,
        }
    }
}

impl ForwardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::param("noise_std", "must be >= 0"));
        }
        if !(self.grueneisen_scale > 0.0 && self.grueneisen_scale.is_finite()) {
            return Err(Error::param("grueneisen_scale", "must be positive"));
        }
        Ok(())
    }
}

/// Result of a simulation: the frame plus the number of source pixels with
/// at least one arrival beyond the recording window.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub frame: RawFrame,
    pub truncated_sources: usize,
}

/// The forward operator with its per-(element, pixel) interpolation taps
/// precomputed, so that repeated applications (iterative solvers) only pay
/// for the sparse gather/scatter.
#[derive(Debug, Clone)]
pub struct ForwardOperator {
    grid: GridSpec,
    geometry: ArrayGeometry,
    acquisition: AcquisitionParams,
    impulse: ImpulseResponse,
    config: ForwardConfig,
    // element-major: entry (j, p) lives at j * pixel_count + p
    lower: Vec<u32>,
    weight_lower: Vec<f64>,
    weight_upper: Vec<f64>,
    lipschitz: OnceLock<f64>,
}

/// Power iterations behind [`ForwardOperator::lipschitz`].
pub const LIPSCHITZ_ITERATIONS: usize = 30;

impl ForwardOperator {
    pub fn new(
        grid: GridSpec,
        geometry: ArrayGeometry,
        acquisition: AcquisitionParams,
        impulse: ImpulseResponse,
        config: ForwardConfig,
    ) -> Result<Self> {
        grid.validate()?;
        acquisition.validate()?;
        config.validate()?;
        geometry.check_sound_speed(acquisition.sound_speed)?;
        if (impulse.sampling_rate - acquisition.sampling_rate).abs()
            > 1e-9 * acquisition.sampling_rate
        {
            return Err(Error::SamplingRateMismatch {
                impulse: impulse.sampling_rate,
                acquisition: acquisition.sampling_rate,
            });
        }
        let pixels = grid.pixel_count();
        let elements = geometry.element_count();
        let mut lower = vec![EMPTY; elements * pixels];
        let mut weight_lower = vec![0.0; elements * pixels];
        let mut weight_upper = vec![0.0; elements * pixels];
        let lw = geometry.pitch() / geometry.wavelength() * PI;
        lower
            .par_chunks_mut(pixels)
            .zip(weight_lower.par_chunks_mut(pixels))
            .zip(weight_upper.par_chunks_mut(pixels))
            .enumerate()
            .for_each(|(j, ((lo, w0), w1))| {
                let xe = geometry.element_positions()[j];
                for p in 0..pixels {
                    let z = grid.z(p / grid.nx);
                    let dx = grid.x(p % grid.nx) - xe;
                    let r = (z * z + dx * dx).sqrt();
                    if r <= 0.0 {
                        continue;
                    }
                    let Some((k, w)) = acquisition.interpolation_taps(r) else {
                        continue;
                    };
                    let mut gain = config.grueneisen_scale / r;
                    if config.use_directivity {
                        gain *= sinc_gain(lw * dx / r);
                    }
                    lo[p] = k as u32;
                    w0[p] = gain * (1.0 - w);
                    w1[p] = gain * w;
                }
            });
        Ok(Self {
            grid,
            geometry,
            acquisition,
            impulse,
            config,
            lower,
            weight_lower,
            weight_upper,
            lipschitz: OnceLock::new(),
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn geometry(&self) -> &ArrayGeometry {
        &self.geometry
    }

    pub fn acquisition(&self) -> &AcquisitionParams {
        &self.acquisition
    }

    pub fn config(&self) -> &ForwardConfig {
        &self.config
    }

    pub fn impulse(&self) -> &ImpulseResponse {
        &self.impulse
    }

    fn check_image(&self, image: &Array2<f64>) -> Result<()> {
        if image.dim() != self.grid.shape() {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?}", self.grid.shape()),
                found: format!("{:?}", image.dim()),
            });
        }
        Ok(())
    }

    /// Noise-free `H s` as a `K x J` array.
    pub fn apply(&self, image: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_image(image)?;
        let sources: Vec<(usize, f64)> = image
            .iter()
            .enumerate()
            .filter(|(_, &a)| a != 0.0)
            .map(|(p, &a)| (p, a))
            .collect();
        let k_count = self.acquisition.sample_count;
        let pixels = self.grid.pixel_count();
        let traces: Vec<Vec<f64>> = (0..self.geometry.element_count())
            .into_par_iter()
            .map(|j| {
                let base = j * pixels;
                let mut trace = vec![0.0; k_count];
                for &(p, a) in &sources {
                    let k = self.lower[base + p];
                    if k == EMPTY {
                        continue;
                    }
                    let k = k as usize;
                    trace[k] += a * self.weight_lower[base + p];
                    trace[k + 1] += a * self.weight_upper[base + p];
                }
                self.temporal(&trace)
            })
            .collect();
        Ok(traces_to_frame(&traces, k_count))
    }

    /// `H^T q` for a `K x J` array `q`.
    pub fn adjoint(&self, data: &Array2<f64>) -> Result<Array2<f64>> {
        let expected = (self.acquisition.sample_count, self.geometry.element_count());
        if data.dim() != expected {
            return Err(Error::ShapeMismatch {
                expected: format!("{expected:?}"),
                found: format!("{:?}", data.dim()),
            });
        }
        let traces: Vec<Vec<f64>> = (0..expected.1)
            .into_par_iter()
            .map(|j| self.temporal_transpose(&data.column(j).to_vec()))
            .collect();
        let pixels = self.grid.pixel_count();
        let nx = self.grid.nx;
        let mut image = Array2::zeros(self.grid.shape());
        image
            .as_slice_mut()
            .expect("standard layout")
            .par_chunks_mut(nx)
            .enumerate()
            .for_each(|(row, out)| {
                let start = row * nx;
                for (j, trace) in traces.iter().enumerate() {
                    let base = j * pixels + start;
                    for (c, o) in out.iter_mut().enumerate() {
                        let k = self.lower[base + c];
                        if k == EMPTY {
                            continue;
                        }
                        let k = k as usize;
                        *o += self.weight_lower[base + c] * trace[k]
                            + self.weight_upper[base + c] * trace[k + 1];
                    }
                }
            });
        Ok(image)
    }

    /// Full simulation including noise drawn from `seed`; element `j` uses
    /// ChaCha stream `j`, so results do not depend on scheduling.
    pub fn simulate(&self, image: &ImageGrid, seed: u64) -> Result<Simulation> {
        if image.grid != self.grid {
            return Err(Error::GeometryMismatch(
                "image grid differs from operator grid".into(),
            ));
        }
        if !image.is_nonnegative() || image.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("image", "must be finite and nonnegative"));
        }
        let mut data = self.apply(&image.data)?;
        if self.config.noise_std > 0.0 {
            add_noise(&mut data, self.config.noise_std, seed);
        }
        let truncated_sources = self.truncated_sources(&image.data);
        if truncated_sources > 0 {
            log::warn!("{truncated_sources} source pixels arrive outside the recording window");
        }
        Ok(Simulation {
            frame: RawFrame {
                data,
                geometry: self.geometry.clone(),
                acquisition: self.acquisition,
            },
            truncated_sources,
        })
    }

    /// Nonzero pixels with at least one element arrival outside `[0, K-1]`.
    pub fn truncated_sources(&self, image: &Array2<f64>) -> usize {
        let pixels = self.grid.pixel_count();
        image
            .iter()
            .enumerate()
            .filter(|(_, &a)| a != 0.0)
            .filter(|(p, _)| {
                (0..self.geometry.element_count()).any(|j| self.lower[j * pixels + p] == EMPTY)
            })
            .count()
    }

    fn temporal(&self, trace: &[f64]) -> Vec<f64> {
        let d = if self.config.use_derivative {
            central_difference(trace, self.acquisition.sampling_rate)
        } else {
            trace.to_vec()
        };
        convolve_same(&d, &self.impulse)
    }

    fn temporal_transpose(&self, trace: &[f64]) -> Vec<f64> {
        let c = correlate_same(trace, &self.impulse);
        if self.config.use_derivative {
            central_difference_transpose(&c, self.acquisition.sampling_rate)
        } else {
            c
        }
    }

    /// Largest singular value of the operator, by power iteration on `H^T H`.
    pub fn spectral_norm(&self, iterations: usize, seed: u64) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut v = Array2::from_shape_fn(self.grid.shape(), |_| normal.sample(&mut rng));
        let mut sigma_sq = 0.0;
        for _ in 0..iterations.max(1) {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Ok(0.0);
            }
            v.mapv_inplace(|x| x / norm);
            let w = self.adjoint(&self.apply(&v)?)?;
            sigma_sq = w.iter().zip(v.iter()).map(|(a, b)| a * b).sum::<f64>();
            v = w;
        }
        Ok(sigma_sq.max(0.0).sqrt())
    }

    /// `sigma_max(H)^2`, the Lipschitz constant of the gradient of
    /// `1/2 |y - Hs|^2`. Estimated once and shared by later callers.
    pub fn lipschitz(&self) -> Result<f64> {
        if let Some(&l) = self.lipschitz.get() {
            return Ok(l);
        }
        let sigma = self.spectral_norm(LIPSCHITZ_ITERATIONS, 0)?;
        Ok(*self.lipschitz.get_or_init(|| sigma * sigma))
    }
}

fn traces_to_frame(traces: &[Vec<f64>], k_count: usize) -> Array2<f64> {
    let j_count = traces.len();
    Array2::from_shape_fn((k_count, j_count), |(k, j)| traces[j][k])
}

pub(crate) fn add_noise(data: &mut Array2<f64>, std: f64, seed: u64) {
    let normal = Normal::new(0.0, std).expect("finite std");
    for (j, mut col) in data.axis_iter_mut(Axis(1)).enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(j as u64);
        for v in col.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
}

fn central_difference(x: &[f64], fs: f64) -> Vec<f64> {
    let n = x.len();
    let at = |i: isize| {
        if i >= 0 && (i as usize) < n {
            x[i as usize]
        } else {
            0.0
        }
    };
    (0..n as isize)
        .map(|k| (at(k + 1) - at(k - 1)) * fs / 2.0)
        .collect()
}

fn central_difference_transpose(u: &[f64], fs: f64) -> Vec<f64> {
    let n = u.len();
    let at = |i: isize| {
        if i >= 0 && (i as usize) < n {
            u[i as usize]
        } else {
            0.0
        }
    };
    (0..n as isize)
        .map(|k| (at(k - 1) - at(k + 1)) * fs / 2.0)
        .collect()
}

/// `out[k] = sum_m h[m] x[k + p - m]`, `p` the peak tap of `h`.
fn convolve_same(x: &[f64], h: &ImpulseResponse) -> Vec<f64> {
    let taps = h.taps();
    if taps.len() == 1 {
        return x.iter().map(|v| v * taps[0]).collect();
    }
    let p = h.peak_index() as isize;
    let n = x.len() as isize;
    (0..n)
        .map(|k| {
            taps.iter()
                .enumerate()
                .filter_map(|(m, &t)| {
                    let i = k + p - m as isize;
                    (i >= 0 && i < n).then(|| t * x[i as usize])
                })
                .sum()
        })
        .collect()
}

/// Transpose of [`convolve_same`]: `out[n] = sum_m h[m] u[n - p + m]`.
fn correlate_same(u: &[f64], h: &ImpulseResponse) -> Vec<f64> {
    let taps = h.taps();
    if taps.len() == 1 {
        return u.iter().map(|v| v * taps[0]).collect();
    }
    let p = h.peak_index() as isize;
    let n = u.len() as isize;
    (0..n)
        .map(|k| {
            taps.iter()
                .enumerate()
                .filter_map(|(m, &t)| {
                    let i = k - p + m as isize;
                    (i >= 0 && i < n).then(|| t * u[i as usize])
                })
                .sum()
        })
        .collect()
}

/// Simulates one frame (see [`ForwardOperator`]).
pub fn forward(
    image: &ImageGrid,
    geometry: &ArrayGeometry,
    acquisition: &AcquisitionParams,
    impulse: &ImpulseResponse,
    config: &ForwardConfig,
    seed: u64,
) -> Result<Simulation> {
    ForwardOperator::new(
        image.grid,
        geometry.clone(),
        *acquisition,
        impulse.clone(),
        *config,
    )?
    .simulate(image, seed)
}

/// Transpose of the noise-free forward map.
pub fn adjoint(
    frame: &RawFrame,
    grid: &GridSpec,
    impulse: &ImpulseResponse,
    config: &ForwardConfig,
) -> Result<ImageGrid> {
    let op = ForwardOperator::new(
        *grid,
        frame.geometry.clone(),
        frame.acquisition,
        impulse.clone(),
        *config,
    )?;
    Ok(ImageGrid {
        data: op.adjoint(&frame.data)?,
        grid: *grid,
    })
}

/// Options for [`measure_impulse_response`].
#[derive(Debug, Clone, Copy)]
pub struct MeasureOptions {
    /// Number of taps to extract around the peak.
    pub window: usize,
    /// Channels whose peak is below this fraction of the strongest peak are ignored.
    pub min_relative_peak: f64,
}

impl Default for MeasureOptions {
    fn default() -> Self {
        Self {
            window: 64,
            min_relative_peak: 0.5,
        }
    }
}

/// Estimates `h(t)` from a frame dominated by one point-source echo: every
/// strong channel is aligned to the strongest one with sub-sample precision
/// (Fourier shift of the envelope peak), and the aligned windows are
/// averaged with least-squares weights.
pub fn measure_impulse_response(
    frame: &RawFrame,
    options: MeasureOptions,
) -> Result<ImpulseResponse> {
    let data = &frame.data;
    let (k_count, j_count) = data.dim();
    let floor = robust_noise_std(data.iter().copied().collect());
    let threshold = 6.0 * floor;
    let (j_ref, peak) =
        data.indexed_iter().fold(
            (0, 0.0),
            |best, ((_, j), &v)| {
                if v.abs() > best.1 {
                    (j, v.abs())
                } else {
                    best
                }
            },
        );
    if !(peak > threshold) || peak == 0.0 {
        return Err(Error::NoPeak { threshold, floor });
    }

    let window = options.window.clamp(1, k_count);
    let mut planner = FftPlanner::new();
    let mut aligned: Vec<(usize, Vec<f64>)> = Vec::new();
    for j in 0..j_count {
        let col: Vec<f64> = data.column(j).to_vec();
        let col_peak = col.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if col_peak <= threshold || col_peak < options.min_relative_peak * peak {
            continue;
        }
        let env = signal::envelope(&col);
        let t = parabolic_peak(&env);
        // shift so that the envelope peak lands on sample window/2
        let shifted = fractional_shift(&mut planner, &col, window as f64 / 2.0 - t);
        aligned.push((j, shifted[..window].to_vec()));
    }
    let reference = aligned
        .iter()
        .find(|(j, _)| *j == j_ref)
        .map(|(_, w)| w.clone())
        .ok_or(Error::NoPeak { threshold, floor })?;
    let ref_energy: f64 = reference.iter().map(|v| v * v).sum();
    let mut taps = vec![0.0; window];
    for (_, w) in &aligned {
        let c = w.iter().zip(&reference).map(|(a, b)| a * b).sum::<f64>() / ref_energy;
        for (t, v) in taps.iter_mut().zip(w) {
            *t += c * v;
        }
    }
    let max = taps.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    taps.iter_mut().for_each(|t| *t /= max);
    ImpulseResponse::new(taps, frame.acquisition.sampling_rate)
}

fn robust_noise_std(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let median = |v: &mut Vec<f64>| {
        let mid = v.len() / 2;
        *v.select_nth_unstable_by(mid, |a, b| a.total_cmp(b)).1
    };
    let m = median(&mut values);
    let mut dev: Vec<f64> = values.iter().map(|v| (v - m).abs()).collect();
    median(&mut dev) / 0.674_489_750_196_081_7
}

fn parabolic_peak(x: &[f64]) -> f64 {
    let (i, _) = x
        .iter()
        .enumerate()
        .fold((0, f64::MIN), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
    if i == 0 || i + 1 >= x.len() {
        return i as f64;
    }
    let (a, b, c) = (x[i - 1], x[i], x[i + 1]);
    let denom = a - 2.0 * b + c;
    if denom.abs() < f64::EPSILON {
        i as f64
    } else {
        i as f64 + 0.5 * (a - c) / denom
    }
}

/// Band-limited (circular) delay of `x` by `delay` samples.
fn fractional_shift(planner: &mut FftPlanner<f64>, x: &[f64], delay: f64) -> Vec<f64> {
    let n = x.len();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let f = if k <= n / 2 {
            k as f64
        } else {
            k as f64 - n as f64
        };
        let f = if n.is_multiple_of(2) && k == n / 2 { 0.0 } else { f };
        *v *= Complex64::from_polar(1.0 / n as f64, -2.0 * PI * f * delay / n as f64);
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re).collect()
}
