//! Frequency-domain mapping between an image spectrum `S(k_z, k_x)` and the
//! data spectrum `Y(f, k_x)` of a linear array on the surface `z = 0`:
//! `Y = |f| / |k_z| * S` with `k_z = sgn(f) sqrt((f/c)^2 - k_x^2)`.
//!
//! Spatial frequencies are in cycles per metre. Spectra are held on padded
//! FFT lattices whose phase reference sits at the centre of the data (or
//! image) window, which keeps them smooth enough for linear interpolation
//! along `f` and `k_z`. The lateral lattice is shared by data and image,
//! so the grid spacing must equal the element pitch.

use ndarray::{Array2, Axis};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AcquisitionParams, ArrayGeometry, GridSpec, ImageGrid, RawFrame};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KspaceConfig {
    /// Hz; 0 keeps everything down to DC.
    pub band_low: f64,
    /// Hz; `None` keeps everything up to Nyquist.
    pub band_high: Option<f64>,
    /// Lower bound on `|k_z|` as a fraction of the image Nyquist frequency.
    pub amplitude_floor: f64,
    /// Zero-padding factor of every FFT lattice.
    pub oversampling: usize,
}

impl Default for KspaceConfig {
    fn default() -> Self {
        Self {
            band_low: 0.0,
            band_high: None,
            amplitude_floor: 1e-3,
            oversampling: 4,
        }
    }
}

impl KspaceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.band_low >= 0.0 && self.band_low.is_finite()) {
            return Err(Error::param("band_low", "must be finite and >= 0"));
        }
        if let Some(high) = self.band_high {
            if !(high > self.band_low) {
                return Err(Error::param("band_high", "must exceed band_low"));
            }
        }
        if !(self.amplitude_floor > 0.0 && self.amplitude_floor <= 1.0) {
            return Err(Error::param("amplitude_floor", "must lie in (0, 1]"));
        }
        if self.oversampling == 0 {
            return Err(Error::param("oversampling", "must be >= 1"));
        }
        Ok(())
    }

    fn in_band(&self, f: f64) -> bool {
        let f = f.abs();
        f >= self.band_low && self.band_high.is_none_or(|h| f <= h)
    }
}

/// Spectrum on an FFT lattice. The continuous-transform value at
/// `(row, col)` is `data[[row, col]] * exp(-2 pi i (u * u_ref + kx * x_ref))`
/// where `u` is the axial frequency (Hz or cycles/m) of the row.
#[derive(Debug, Clone, PartialEq)]
pub struct KSpectrum {
    pub data: Array2<Complex64>,
    /// Spacing of the axial frequency lattice (Hz for data, cycles/m for images).
    pub axial_step: f64,
    pub kx_step: f64,
    /// Axial coordinate (s or m) of the phase reference.
    pub axial_ref: f64,
    pub x_ref: f64,
}

fn fftfreq(index: usize, n: usize) -> f64 {
    if index < n.div_ceil(2) {
        index as f64
    } else {
        index as f64 - n as f64
    }
}

impl KSpectrum {
    pub fn axial_frequency(&self, row: usize) -> f64 {
        fftfreq(row, self.data.nrows()) * self.axial_step
    }

    pub fn kx(&self, col: usize) -> f64 {
        fftfreq(col, self.data.ncols()) * self.kx_step
    }

    /// Continuous-transform value at a lattice point.
    pub fn value(&self, row: usize, col: usize) -> Complex64 {
        let phase = self.axial_frequency(row) * self.axial_ref + self.kx(col) * self.x_ref;
        self.data[[row, col]] * Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * phase)
    }

    /// Linear interpolation of the lattice data along column `col` at axial
    /// frequency `u`; zero beyond the lattice Nyquist frequency.
    fn interpolate(&self, col: usize, u: f64) -> Complex64 {
        let n = self.data.nrows();
        let pos = u / self.axial_step;
        let limit = (n / 2) as f64 - 1.0;
        if !(pos.abs() <= limit) {
            return Complex64::new(0.0, 0.0);
        }
        let lo = pos.floor();
        let w = pos - lo;
        let at = |i: f64| self.data[[(i as i64).rem_euclid(n as i64) as usize, col]];
        at(lo) * (1.0 - w) + at(lo + 1.0) * w
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }
}

fn fft2(data: &mut Array2<Complex64>, inverse: bool) {
    let mut planner = FftPlanner::new();
    for axis in [Axis(0), Axis(1)] {
        let n = data.len_of(axis);
        let fft = if inverse {
            planner.plan_fft_inverse(n)
        } else {
            planner.plan_fft_forward(n)
        };
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for mut lane in data.lanes_mut(axis) {
            for (b, v) in buf.iter_mut().zip(lane.iter()) {
                *b = *v;
            }
            fft.process(&mut buf);
            for (v, b) in lane.iter_mut().zip(&buf) {
                *v = *b;
            }
        }
    }
}

/// Places `values` circularly centred in a `rows x cols` buffer (entry
/// `(n/2, m/2)` at the origin) and transforms it.
fn centred_spectrum(values: &Array2<f64>, rows: usize, cols: usize) -> Array2<Complex64> {
    let (n, m) = values.dim();
    let mut buf = Array2::zeros((rows, cols));
    for ((r, c), &v) in values.indexed_iter() {
        let rr = (r as i64 - (n / 2) as i64).rem_euclid(rows as i64) as usize;
        let cc = (c as i64 - (m / 2) as i64).rem_euclid(cols as i64) as usize;
        buf[[rr, cc]] = Complex64::new(v, 0.0);
    }
    fft2(&mut buf, false);
    buf
}

/// Inverse of [`centred_spectrum`], keeping the real part.
fn centred_image(mut spectrum: Array2<Complex64>, shape: (usize, usize)) -> Array2<f64> {
    let (rows, cols) = spectrum.dim();
    fft2(&mut spectrum, true);
    let scale = 1.0 / (rows * cols) as f64;
    let (n, m) = shape;
    Array2::from_shape_fn(shape, |(r, c)| {
        let rr = (r as i64 - (n / 2) as i64).rem_euclid(rows as i64) as usize;
        let cc = (c as i64 - (m / 2) as i64).rem_euclid(cols as i64) as usize;
        spectrum[[rr, cc]].re * scale
    })
}

/// Lateral lattice size shared by data and image.
fn lateral_size(grid: &GridSpec, geometry: &ArrayGeometry, cfg: &KspaceConfig) -> Result<usize> {
    let pitch = geometry.pitch();
    if (grid.x_res - pitch).abs() > 1e-9 * pitch {
        return Err(Error::param(
            "x_res",
            format!("k-space mapping needs x_res equal to the pitch ({pitch} m)"),
        ));
    }
    let j = geometry.element_count();
    Ok(cfg.oversampling * j * grid.nx.div_ceil(j))
}

/// Axial image lattice size; covers every depth the recording can reach.
fn axial_size(grid: &GridSpec, acq: &AcquisitionParams, cfg: &KspaceConfig) -> usize {
    let t_end = acq.acquisition_delay + acq.sample_count as f64 / acq.sampling_rate;
    let reach = (t_end * acq.sound_speed / grid.z_res).ceil() as usize;
    cfg.oversampling * grid.nz.max(reach)
}

/// Data spectrum of a frame on the lattice that [`kspace_forward_map`]
/// produces for images on `grid`.
pub fn frame_spectrum(frame: &RawFrame, grid: &GridSpec, cfg: &KspaceConfig) -> Result<KSpectrum> {
    cfg.validate()?;
    let cols = lateral_size(grid, &frame.geometry, cfg)?;
    let rows = cfg.oversampling * frame.acquisition.sample_count;
    Ok(data_spectrum(
        &frame.data,
        &frame.acquisition,
        &frame.geometry,
        rows,
        cols,
    ))
}

fn data_spectrum(
    data: &Array2<f64>,
    acq: &AcquisitionParams,
    geometry: &ArrayGeometry,
    rows: usize,
    cols: usize,
) -> KSpectrum {
    let (k, j) = data.dim();
    KSpectrum {
        data: centred_spectrum(data, rows, cols),
        axial_step: acq.sampling_rate / rows as f64,
        kx_step: 1.0 / (cols as f64 * geometry.pitch()),
        axial_ref: acq.acquisition_delay + (k / 2) as f64 / acq.sampling_rate,
        x_ref: geometry.element_positions()[j / 2],
    }
}

fn image_spectrum(image: &Array2<f64>, grid: &GridSpec, rows: usize, cols: usize) -> KSpectrum {
    let (n, m) = image.dim();
    KSpectrum {
        data: centred_spectrum(image, rows, cols),
        axial_step: 1.0 / (rows as f64 * grid.z_res),
        kx_step: 1.0 / (cols as f64 * grid.x_res),
        axial_ref: grid.z(n / 2),
        x_ref: grid.x(m / 2),
    }
}

fn rephase(value: Complex64, phase_cycles: f64) -> Complex64 {
    value * Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * phase_cycles)
}

/// Data spectrum predicted for `image`, on the lattice [`frame_spectrum`]
/// uses for a frame of this acquisition. Exactly zero where `|f| < c |k_x|`,
/// outside the band and beyond the image's axial Nyquist frequency.
pub fn kspace_forward_map(
    image: &ImageGrid,
    geometry: &ArrayGeometry,
    acq: &AcquisitionParams,
    cfg: &KspaceConfig,
) -> Result<KSpectrum> {
    cfg.validate()?;
    let grid = image.grid;
    let cols = lateral_size(&grid, geometry, cfg)?;
    let rows_img = axial_size(&grid, acq, cfg);
    let s = image_spectrum(&image.data, &grid, rows_img, cols);
    let rows = cfg.oversampling * acq.sample_count;
    let mut out = data_spectrum(
        &Array2::zeros((acq.sample_count, geometry.element_count())),
        acq,
        geometry,
        rows,
        cols,
    );
    let c = acq.sound_speed;
    let kz_nyquist = 0.5 / grid.z_res;
    let kz_floor = cfg.amplitude_floor * kz_nyquist;
    for q in 0..cols {
        let kx = out.kx(q);
        for p in 0..rows {
            let f = out.axial_frequency(p);
            let disc = (f / c).powi(2) - kx * kx;
            if f == 0.0 || disc < 0.0 || !cfg.in_band(f) {
                continue;
            }
            let kz = f.signum() * disc.sqrt();
            if kz.abs() > kz_nyquist {
                continue;
            }
            let s_value = rephase(s.interpolate(q, kz), kz * s.axial_ref + kx * s.x_ref);
            let y = s_value * (f.abs() / kz.abs().max(kz_floor));
            // store in the data lattice's own phase convention
            out.data[[p, q]] = rephase(y, -(f * out.axial_ref + kx * out.x_ref));
        }
    }
    Ok(out)
}

/// Image from a data spectrum: each image-lattice point `(k_z, k_x)` reads
/// `Y |k_z| / |f|` at `f = sgn(k_z) c sqrt(k_z^2 + k_x^2)`.
pub fn kspace_unmap(
    spectrum: &KSpectrum,
    grid: &GridSpec,
    acq: &AcquisitionParams,
    cfg: &KspaceConfig,
) -> Result<ImageGrid> {
    cfg.validate()?;
    grid.validate()?;
    let cols = spectrum.data.ncols();
    if ((spectrum.kx_step * cols as f64 * grid.x_res) - 1.0).abs() > 1e-9 {
        return Err(Error::param(
            "x_res",
            "lateral lattice of the spectrum does not match the grid",
        ));
    }
    let sound_speed = acq.sound_speed;
    let rows = axial_size(grid, acq, cfg);
    let mut s = image_spectrum(&Array2::zeros(grid.shape()), grid, rows, cols);
    let kz_floor = cfg.amplitude_floor * 0.5 / grid.z_res;
    let n = spectrum.data.nrows();
    let limit = (n / 2) as f64 - 1.0;
    for q in 0..cols {
        let kx = s.kx(q);
        // Each data row maps to k_z(f). Y |k_z| / |f| taken to the image's
        // phase reference is smooth in k_z, unlike Y in f near the
        // evanescent boundary, so interpolation runs in k_z.
        let mapped = |pos: f64| {
            let row = (pos as i64).rem_euclid(n as i64) as usize;
            let f = spectrum.axial_frequency(row);
            let disc = (f / sound_speed).powi(2) - kx * kx;
            if f == 0.0 || disc < 0.0 {
                return None;
            }
            let kz = f.signum() * disc.sqrt();
            let v = spectrum.value(row, q) * (kz.abs().max(kz_floor) / f.abs());
            Some((kz, rephase(v, -(kz * s.axial_ref + kx * s.x_ref))))
        };
        for p in 0..rows {
            let kz = s.axial_frequency(p);
            let sign = if kz < 0.0 { -1.0 } else { 1.0 };
            let f = sign * sound_speed * (kz * kz + kx * kx).sqrt();
            let pos = f / spectrum.axial_step;
            if f == 0.0 || !cfg.in_band(f) || !(pos.abs() <= limit) {
                continue;
            }
            let lo = pos.floor();
            s.data[[p, q]] = match (mapped(lo), mapped(lo + 1.0)) {
                (Some((k0, a)), Some((k1, b))) => {
                    let w = if k1 != k0 { (kz - k0) / (k1 - k0) } else { 0.5 };
                    a * (1.0 - w) + b * w
                }
                (Some((_, a)), None) => a,
                (None, Some((_, b))) => b,
                (None, None) => continue,
            };
        }
    }
    Ok(ImageGrid {
        data: centred_image(s.data, grid.shape()),
        grid: *grid,
    })
}

/// k-space reconstruction of a frame onto `grid`. The output is the real
/// part of the inverse transform, which equals the inverse transform of the
/// Hermitian-symmetrized spectrum.
pub fn kspace_reconstruct(
    frame: &RawFrame,
    grid: &GridSpec,
    cfg: &KspaceConfig,
) -> Result<ImageGrid> {
    cfg.validate()?;
    let y = frame_spectrum(frame, grid, cfg)?;
    kspace_unmap(&y, grid, &frame.acquisition, cfg)
}
