//! Axial signal processing shared by the beamformers: analytic-signal
//! envelopes and zero-phase Butterworth filtering.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayViewMut1, Axis};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Magnitude of the analytic signal of `x`.
pub fn envelope(x: &[f64]) -> Vec<f64> {
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    analytic_in_place(&mut planner, &mut buf);
    buf.iter().map(|c| c.norm()).collect()
}

fn analytic_in_place(planner: &mut FftPlanner<f64>, buf: &mut [Complex64]) {
    let n = buf.len();
    if n == 0 {
        return;
    }
    planner.plan_fft_forward(n).process(buf);
    // keep DC and Nyquist, double positive frequencies, zero negative ones
    let half = n / 2;
    for (k, v) in buf.iter_mut().enumerate() {
        let gain = if k == 0 || (n.is_multiple_of(2) && k == half) {
            1.0
        } else if k < n.div_ceil(2) {
            2.0
        } else {
            0.0
        };
        *v *= gain / n as f64;
    }
    planner.plan_fft_inverse(n).process(buf);
}

/// Envelope of every column of `image` (analytic signal taken along axis 0).
pub fn axial_envelope(image: &Array2<f64>) -> Array2<f64> {
    let (nz, _) = image.dim();
    let mut out = Array2::zeros(image.dim());
    let mut planner = FftPlanner::new();
    let mut buf = vec![Complex64::new(0.0, 0.0); nz];
    for (src, mut dst) in image.axis_iter(Axis(1)).zip(out.axis_iter_mut(Axis(1))) {
        for (b, &v) in buf.iter_mut().zip(src.iter()) {
            *b = Complex64::new(v, 0.0);
        }
        analytic_in_place(&mut planner, &mut buf);
        for (d, b) in dst.iter_mut().zip(&buf) {
            *d = b.norm();
        }
    }
    out
}

/// Second-order section `[b0, b1, b2, a0, a1, a2]` with `a0 == 1`.
pub type Sos = [f64; 6];

/// Digital Butterworth high-pass in second-order sections, designed by the
/// bilinear transform with frequency pre-warping.
#[derive(Debug, Clone, PartialEq)]
pub struct Butterworth {
    pub sections: Vec<Sos>,
}

impl Butterworth {
    pub fn highpass(order: usize, cutoff: f64, sampling_rate: f64) -> Result<Self> {
        if order == 0 {
            return Err(Error::param("filter_order", "must be >= 1"));
        }
        if !(cutoff > 0.0 && cutoff < sampling_rate / 2.0) {
            return Err(Error::param(
                "highpass_cutoff",
                format!("{cutoff} Hz must lie in (0, {}) Hz", sampling_rate / 2.0),
            ));
        }
        let fs2 = 2.0 * sampling_rate;
        let warped = fs2 * (PI * cutoff / sampling_rate).tan();
        let bilinear = |s: Complex64| (fs2 + s) / (fs2 - s);

        let mut sections = Vec::with_capacity(order.div_ceil(2));
        // prototype poles exp(i*pi*(2k+N+1)/(2N)) in the left half plane
        for k in 0..order / 2 {
            let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
            let proto = Complex64::from_polar(1.0, theta);
            let zp = bilinear(warped / proto);
            let a1 = -2.0 * zp.re;
            let a2 = zp.norm_sqr();
            // unit gain at Nyquist: H(-1) = g*4 / (1 - a1 + a2)
            let g = (1.0 - a1 + a2) / 4.0;
            sections.push([g, -2.0 * g, g, 1.0, a1, a2]);
        }
        if order % 2 == 1 {
            let zp = bilinear(Complex64::new(-warped, 0.0)).re;
            let g = (1.0 + zp) / 2.0;
            sections.push([g, -g, 0.0, 1.0, -zp, 0.0]);
        }
        Ok(Self { sections })
    }

    /// |H(e^{i 2 pi f / fs})|
    pub fn magnitude(&self, frequency: f64, sampling_rate: f64) -> f64 {
        let z = Complex64::from_polar(1.0, -2.0 * PI * frequency / sampling_rate);
        let z2 = z * z;
        self.sections
            .iter()
            .map(|s| ((s[0] + s[1] * z + s[2] * z2) / (s[3] + s[4] * z + s[5] * z2)).norm())
            .product()
    }

    /// Steady-state initial conditions of the cascade for a unit step input.
    fn step_state(&self) -> Vec<[f64; 2]> {
        let mut scale = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let (b0, b1, b2, a1, a2) = (s[0], s[1], s[2], s[4], s[5]);
                let r0 = b1 - a1 * b0;
                let r1 = b2 - a2 * b0;
                let z0 = (r0 + r1) / (1.0 + a1 + a2);
                let z1 = r1 - a2 * z0;
                let zi = [scale * z0, scale * z1];
                scale *= (b0 + b1 + b2) / (1.0 + a1 + a2);
                zi
            })
            .collect()
    }

    fn run(&self, x: &mut [f64], state: &mut [[f64; 2]]) {
        for (s, z) in self.sections.iter().zip(state.iter_mut()) {
            let (b0, b1, b2, a1, a2) = (s[0], s[1], s[2], s[4], s[5]);
            for v in x.iter_mut() {
                let y = b0 * *v + z[0];
                z[0] = b1 * *v - a1 * y + z[1];
                z[1] = b2 * *v - a2 * y;
                *v = y;
            }
        }
    }

    fn pad_length(&self) -> usize {
        let zero_b2 = self.sections.iter().filter(|s| s[2] == 0.0).count();
        let zero_a2 = self.sections.iter().filter(|s| s[5] == 0.0).count();
        3 * (2 * self.sections.len() + 1 - zero_b2.min(zero_a2))
    }

    /// Forward-backward filtering with odd-extension padding and steady-state
    /// initial conditions; zero phase, squared magnitude response.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n < 2 {
            return x.to_vec();
        }
        let pad = self.pad_length().min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((0..pad).map(|i| 2.0 * x[0] - x[pad - i]));
        ext.extend_from_slice(x);
        ext.extend((0..pad).map(|i| 2.0 * x[n - 1] - x[n - 2 - i]));

        let zi = self.step_state();
        let scaled = |v: f64| zi.iter().map(|z| [z[0] * v, z[1] * v]).collect::<Vec<_>>();
        let mut state = scaled(ext[0]);
        self.run(&mut ext, &mut state);
        ext.reverse();
        let mut state = scaled(ext[0]);
        self.run(&mut ext, &mut state);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }

    pub fn filtfilt_in_place(&self, mut column: ArrayViewMut1<f64>) {
        let x: Vec<f64> = column.iter().copied().collect();
        for (d, v) in column.iter_mut().zip(self.filtfilt(&x)) {
            *d = v;
        }
    }
}
