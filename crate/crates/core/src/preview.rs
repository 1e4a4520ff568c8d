//! 8-bit log-compressed previews for quick visual checks.

use std::path::Path;

use image::GrayImage;
use ndarray::Array2;

use crate::error::{Error, Result};

/// Maps `|v| / max` to gray levels over `dynamic_range_db`; values below the
/// range floor are black, the peak is white.
pub fn log_compress(image: &Array2<f64>, dynamic_range_db: f64) -> Array2<u8> {
    let peak = image.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    image.mapv(|v| {
        if peak == 0.0 || v == 0.0 {
            return 0;
        }
        let db = 20.0 * (v.abs() / peak).log10();
        let level = ((db + dynamic_range_db) / dynamic_range_db).clamp(0.0, 1.0);
        (level * 255.0).round() as u8
    })
}

pub fn save_png(image: &Array2<f64>, dynamic_range_db: f64, path: &Path) -> Result<()> {
    let levels = log_compress(image, dynamic_range_db);
    let (h, w) = levels.dim();
    let img = GrayImage::from_fn(w as u32, h as u32, |c, r| {
        image::Luma([levels[[r as usize, c as usize]]])
    });
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn levels_span_the_dynamic_range() {
        let img = array![[1.0, 0.1, 0.01, 0.001, 0.0, -1.0]];
        let l = log_compress(&img, 40.0);
        assert_eq!(l.row(0).to_vec(), vec![255, 128, 0, 0, 0, 255]);
    }

    #[test]
    fn zero_image_is_black() {
        assert!(log_compress(&Array2::zeros((3, 3)), 40.0)
            .iter()
            .all(|&v| v == 0));
    }
}
