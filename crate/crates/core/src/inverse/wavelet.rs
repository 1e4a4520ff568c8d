//! Periodized orthonormal 4-tap Daubechies transform in two dimensions.

use ndarray::{Array2, ArrayViewMut1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Wavelet {
    #[default]
    Daubechies4,
}

const SQRT3: f64 = 1.732_050_807_568_877_2;

fn lowpass() -> [f64; 4] {
    let norm = 4.0 * std::f64::consts::SQRT_2;
    [
        (1.0 + SQRT3) / norm,
        (3.0 + SQRT3) / norm,
        (3.0 - SQRT3) / norm,
        (1.0 - SQRT3) / norm,
    ]
}

fn highpass() -> [f64; 4] {
    let h = lowpass();
    [h[3], -h[2], h[1], -h[0]]
}

/// Multi-level 2-D transform with the coefficients kept in the usual
/// nested layout: the approximation band shrinks into the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wavelet2d {
    pub wavelet: Wavelet,
    pub levels: usize,
}

impl Wavelet2d {
    pub fn new(wavelet: Wavelet, levels: usize) -> Self {
        Self { wavelet, levels }
    }

    /// Both sides must halve evenly `levels` times.
    pub fn check_shape(&self, shape: (usize, usize)) -> Result<()> {
        let step = 1usize << self.levels;
        if !shape.0.is_multiple_of(step) || !shape.1.is_multiple_of(step) {
            return Err(Error::param(
                "levels",
                format!(
                    "image {}x{} is not divisible by 2^{}",
                    shape.0, shape.1, self.levels
                ),
            ));
        }
        Ok(())
    }

    /// Analysis, `W^T s`.
    pub fn forward(&self, image: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_shape(image.dim())?;
        let mut c = image.clone();
        let (mut rows, mut cols) = image.dim();
        let mut buf = Vec::new();
        for _ in 0..self.levels {
            let mut block = c.slice_mut(ndarray::s![..rows, ..cols]);
            for lane in block.lanes_mut(Axis(1)) {
                analyze(lane, &mut buf);
            }
            for lane in block.lanes_mut(Axis(0)) {
                analyze(lane, &mut buf);
            }
            rows /= 2;
            cols /= 2;
        }
        Ok(c)
    }

    /// Synthesis, `W a`.
    pub fn inverse(&self, coeffs: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_shape(coeffs.dim())?;
        let mut c = coeffs.clone();
        let (nz, nx) = coeffs.dim();
        let mut buf = Vec::new();
        for level in (0..self.levels).rev() {
            let (rows, cols) = (nz >> level, nx >> level);
            let mut block = c.slice_mut(ndarray::s![..rows, ..cols]);
            for lane in block.lanes_mut(Axis(0)) {
                synthesize(lane, &mut buf);
            }
            for lane in block.lanes_mut(Axis(1)) {
                synthesize(lane, &mut buf);
            }
        }
        Ok(c)
    }
}

fn analyze(mut x: ArrayViewMut1<f64>, buf: &mut Vec<f64>) {
    let n = x.len();
    let (h, g) = (lowpass(), highpass());
    buf.clear();
    buf.resize(n, 0.0);
    let half = n / 2;
    for i in 0..half {
        let (mut a, mut d) = (0.0, 0.0);
        for k in 0..4 {
            let v = x[(2 * i + k) % n];
            a += h[k] * v;
            d += g[k] * v;
        }
        buf[i] = a;
        buf[half + i] = d;
    }
    for (o, &v) in x.iter_mut().zip(buf.iter()) {
        *o = v;
    }
}

fn synthesize(mut x: ArrayViewMut1<f64>, buf: &mut Vec<f64>) {
    let n = x.len();
    let (h, g) = (lowpass(), highpass());
    buf.clear();
    buf.resize(n, 0.0);
    let half = n / 2;
    for i in 0..half {
        let (a, d) = (x[i], x[half + i]);
        for k in 0..4 {
            buf[(2 * i + k) % n] += h[k] * a + g[k] * d;
        }
    }
    for (o, &v) in x.iter_mut().zip(buf.iter()) {
        *o = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: (usize, usize), seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn filters_are_orthonormal() {
        let (h, g) = (lowpass(), highpass());
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        assert!((dot(&h, &h) - 1.0).abs() < 1e-15);
        assert!((dot(&g, &g) - 1.0).abs() < 1e-15);
        assert!(dot(&h, &g).abs() < 1e-15);
        assert!((h[0] * h[2] + h[1] * h[3]).abs() < 1e-15);
        assert!((h.iter().sum::<f64>() - std::f64::consts::SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn perfect_reconstruction_and_parseval() {
        for (shape, levels) in [((64, 32), 3), ((16, 8), 3), ((8, 4), 2)] {
            let w = Wavelet2d::new(Wavelet::Daubechies4, levels);
            let x = random(shape, 5);
            let a = w.forward(&x).unwrap();
            let back = w.inverse(&a).unwrap();
            let err = (&back - &x).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(err < 1e-12, "{err}");
            let ex: f64 = x.iter().map(|v| v * v).sum();
            let ea: f64 = a.iter().map(|v| v * v).sum();
            assert!((ex - ea).abs() < 1e-10 * ex);
        }
    }

    #[test]
    fn constant_image_lands_in_the_approximation_band() {
        let w = Wavelet2d::new(Wavelet::Daubechies4, 2);
        let a = w.forward(&Array2::from_elem((8, 8), 1.0)).unwrap();
        // each level scales a constant by 2 (sqrt 2 per axis)
        for ((r, c), &v) in a.indexed_iter() {
            let expected = if r < 2 && c < 2 { 4.0 } else { 0.0 };
            assert!((v - expected).abs() < 1e-12, "({r}, {c}) = {v}");
        }
    }

    #[test]
    fn indivisible_shape_rejected() {
        let w = Wavelet2d::new(Wavelet::Daubechies4, 3);
        assert!(w.forward(&Array2::zeros((12, 8))).is_err());
    }
}
