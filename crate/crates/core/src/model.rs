//! Shared domain types: array geometry, acquisition settings, image grids,
//! raw channel frames and delay tensors.
//!
//! Axes follow the imaging convention of a linear array lying on `z = 0`:
//! `z` is depth (axial), `x` is lateral and runs along the array.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Soft-tissue sound speed in m/s.
pub const DEFAULT_SOUND_SPEED: f64 = 1540.0;
pub const DEFAULT_ELEMENT_COUNT: usize = 128;
pub const DEFAULT_PITCH: f64 = 0.1e-3;
pub const DEFAULT_CENTER_FREQUENCY: f64 = 15.63e6;
pub const DEFAULT_SAMPLE_COUNT: usize = 2048;
pub const DEFAULT_SAMPLING_RATE: f64 = 62.5e6;
pub const DEFAULT_Z_RES: f64 = 0.05e-3;
pub const DEFAULT_X_RES: f64 = 0.1e-3;
pub const DEFAULT_NZ: usize = 512;
pub const DEFAULT_NX: usize = 128;

/// Linear transducer array centred on the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GeometryFields", into = "GeometryFields")]
pub struct ArrayGeometry {
    element_count: usize,
    pitch: f64,
    center_frequency: f64,
    wavelength: f64,
    element_positions: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GeometryFields {
    element_count: usize,
    pitch: f64,
    center_frequency: f64,
    wavelength: f64,
}

impl ArrayGeometry {
    /// Builds the geometry, deriving the wavelength as `sound_speed / center_frequency`.
    pub fn new(
        element_count: usize,
        pitch: f64,
        center_frequency: f64,
        sound_speed: f64,
    ) -> Result<Self> {
        if !(sound_speed > 0.0 && sound_speed.is_finite()) {
            return Err(Error::param("sound_speed", "must be positive"));
        }
        Self::with_wavelength(
            element_count,
            pitch,
            center_frequency,
            sound_speed / center_frequency,
        )
    }

    fn with_wavelength(
        element_count: usize,
        pitch: f64,
        center_frequency: f64,
        wavelength: f64,
    ) -> Result<Self> {
        if element_count < 2 {
            return Err(Error::param("element_count", "need at least 2 elements"));
        }
        if !(pitch > 0.0 && pitch.is_finite()) {
            return Err(Error::param("pitch", "must be positive"));
        }
        if !(center_frequency > 0.0 && center_frequency.is_finite()) {
            return Err(Error::param("center_frequency", "must be positive"));
        }
        if !(wavelength > 0.0 && wavelength.is_finite()) {
            return Err(Error::param("wavelength", "must be positive"));
        }
        let half = (element_count - 1) as f64 / 2.0;
        let element_positions = (0..element_count)
            .map(|j| pitch * (j as f64 - half))
            .collect();
        Ok(Self {
            element_count,
            pitch,
            center_frequency,
            wavelength,
            element_positions,
        })
    }

    pub fn element_count(&self) -> usize {
        self.element_count
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    pub fn center_frequency(&self) -> f64 {
        self.center_frequency
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    /// Sound speed implied by the stored wavelength.
    pub fn sound_speed(&self) -> f64 {
        self.wavelength * self.center_frequency
    }

    /// Lateral element centres `pitch * (j - (J-1)/2)`.
    pub fn element_positions(&self) -> &[f64] {
        &self.element_positions
    }

    /// Checks that the stored wavelength agrees with `sound_speed` to 1e-9 relative.
    pub fn check_sound_speed(&self, sound_speed: f64) -> Result<()> {
        let expected = sound_speed / self.center_frequency;
        if ((self.wavelength - expected) / expected).abs() > 1e-9 {
            return Err(Error::GeometryMismatch(format!(
                "wavelength {} m inconsistent with sound speed {} m/s",
                self.wavelength, sound_speed
            )));
        }
        Ok(())
    }
}

impl Default for ArrayGeometry {
    fn default() -> Self {
        Self::new(
            DEFAULT_ELEMENT_COUNT,
            DEFAULT_PITCH,
            DEFAULT_CENTER_FREQUENCY,
            DEFAULT_SOUND_SPEED,
        )
        .expect("default geometry is valid")
    }
}

impl TryFrom<GeometryFields> for ArrayGeometry {
    type Error = Error;

    fn try_from(f: GeometryFields) -> Result<Self> {
        Self::with_wavelength(f.element_count, f.pitch, f.center_frequency, f.wavelength)
    }
}

impl From<ArrayGeometry> for GeometryFields {
    fn from(g: ArrayGeometry) -> Self {
        Self {
            element_count: g.element_count,
            pitch: g.pitch,
            center_frequency: g.center_frequency,
            wavelength: g.wavelength,
        }
    }
}

/// Temporal sampling of one acquisition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcquisitionParams {
    pub sample_count: usize,
    pub sampling_rate: f64,
    pub sound_speed: f64,
    /// Time of sample 0 relative to the laser pulse, in seconds.
    pub acquisition_delay: f64,
}

impl AcquisitionParams {
    pub fn validate(&self) -> Result<()> {
        if self.sample_count == 0 {
            return Err(Error::param("sample_count", "must be positive"));
        }
        if !(self.sampling_rate > 0.0 && self.sampling_rate.is_finite()) {
            return Err(Error::param("sampling_rate", "must be positive"));
        }
        if !(self.sound_speed > 0.0 && self.sound_speed.is_finite()) {
            return Err(Error::param("sound_speed", "must be positive"));
        }
        if !(self.acquisition_delay >= 0.0 && self.acquisition_delay.is_finite()) {
            return Err(Error::param("acquisition_delay", "must be >= 0"));
        }
        Ok(())
    }

    /// Fractional sample index at which a wave travelling `distance` arrives.
    #[inline]
    pub fn arrival_position(&self, distance: f64) -> f64 {
        (distance / self.sound_speed - self.acquisition_delay) * self.sampling_rate
    }

    /// Linear-interpolation taps for a one-way path of `distance`: the lower
    /// sample index and the weight of the upper sample. `None` when the
    /// arrival falls outside `[0, K-1]`.
    #[inline]
    pub fn interpolation_taps(&self, distance: f64) -> Option<(usize, f64)> {
        let pos = self.arrival_position(distance);
        let last = (self.sample_count - 1) as f64;
        if !(pos >= 0.0 && pos <= last) || self.sample_count < 2 {
            return None;
        }
        let lower = pos.floor();
        if lower >= last {
            // pos == K-1 exactly
            return Some((self.sample_count - 2, 1.0));
        }
        Some((lower as usize, pos - lower))
    }
}

impl Default for AcquisitionParams {
    fn default() -> Self {
        Self {
            sample_count: DEFAULT_SAMPLE_COUNT,
            sampling_rate: DEFAULT_SAMPLING_RATE,
            sound_speed: DEFAULT_SOUND_SPEED,
            acquisition_delay: 0.0,
        }
    }
}

/// Pixel lattice of an image: shape, resolutions and the physical position
/// of pixel `(0, 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub nz: usize,
    pub nx: usize,
    pub z_res: f64,
    pub x_res: f64,
    pub z_origin: f64,
    pub x_origin: f64,
}

impl GridSpec {
    /// A grid whose first row sits one axial step below the array and whose
    /// columns are centred laterally.
    pub fn centered(nz: usize, nx: usize, z_res: f64, x_res: f64) -> Self {
        Self {
            nz,
            nx,
            z_res,
            x_res,
            z_origin: z_res,
            x_origin: -(nx as f64 - 1.0) / 2.0 * x_res,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nz == 0 || self.nx == 0 {
            return Err(Error::param("grid", "shape must be nonzero"));
        }
        if !(self.z_res > 0.0 && self.z_res.is_finite()) {
            return Err(Error::param("z_res", "must be positive"));
        }
        if !(self.x_res > 0.0 && self.x_res.is_finite()) {
            return Err(Error::param("x_res", "must be positive"));
        }
        if !(self.z_origin.is_finite() && self.x_origin.is_finite()) {
            return Err(Error::param("origin", "must be finite"));
        }
        Ok(())
    }

    #[inline]
    pub fn z(&self, row: usize) -> f64 {
        self.z_origin + row as f64 * self.z_res
    }

    #[inline]
    pub fn x(&self, col: usize) -> f64 {
        self.x_origin + col as f64 * self.x_res
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nz, self.nx)
    }

    pub fn pixel_count(&self) -> usize {
        self.nz * self.nx
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        Self::centered(DEFAULT_NZ, DEFAULT_NX, DEFAULT_Z_RES, DEFAULT_X_RES)
    }
}

/// A 2-D map on a [`GridSpec`], indexed `[z, x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    pub data: Array2<f64>,
    pub grid: GridSpec,
}

impl ImageGrid {
    pub fn new(data: Array2<f64>, grid: GridSpec) -> Result<Self> {
        grid.validate()?;
        if data.dim() != grid.shape() {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?}", grid.shape()),
                found: format!("{:?}", data.dim()),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image"));
        }
        Ok(Self { data, grid })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            data: Array2::zeros(grid.shape()),
            grid,
        }
    }

    pub fn is_nonnegative(&self) -> bool {
        self.data.iter().all(|&v| v >= 0.0)
    }
}

/// Channel data `y(t_k, x'_j)` stored as a `K x J` array.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFrame {
    pub data: Array2<f64>,
    pub geometry: ArrayGeometry,
    pub acquisition: AcquisitionParams,
}

impl RawFrame {
    pub fn new(
        data: Array2<f64>,
        geometry: ArrayGeometry,
        acquisition: AcquisitionParams,
    ) -> Result<Self> {
        acquisition.validate()?;
        let expected = (acquisition.sample_count, geometry.element_count());
        if data.dim() != expected {
            return Err(Error::ShapeMismatch {
                expected: format!("{expected:?}"),
                found: format!("{:?}", data.dim()),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("raw frame"));
        }
        Ok(Self {
            data,
            geometry,
            acquisition,
        })
    }

    pub fn zeros(geometry: ArrayGeometry, acquisition: AcquisitionParams) -> Self {
        Self {
            data: Array2::zeros((acquisition.sample_count, geometry.element_count())),
            geometry,
            acquisition,
        }
    }
}

/// Delay-aligned channel samples `f(r_i, j)`, indexed `[z, x, j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayTensor {
    pub data: Array3<f64>,
    pub grid: GridSpec,
    pub geometry: ArrayGeometry,
}

impl DelayTensor {
    pub fn new(data: Array3<f64>, grid: GridSpec, geometry: ArrayGeometry) -> Result<Self> {
        grid.validate()?;
        let expected = (grid.nz, grid.nx, geometry.element_count());
        if data.dim() != expected {
            return Err(Error::ShapeMismatch {
                expected: format!("{expected:?}"),
                found: format!("{:?}", data.dim()),
            });
        }
        Ok(Self {
            data,
            grid,
            geometry,
        })
    }

    pub fn channel_count(&self) -> usize {
        self.data.dim().2
    }

    /// Unit-weight sum over the channel axis.
    pub fn channel_sum(&self) -> ImageGrid {
        ImageGrid {
            data: self.data.sum_axis(ndarray::Axis(2)),
            grid: self.grid,
        }
    }
}

/// One ground-truth image and the raw frame simulated from it.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub ground_truth: ImageGrid,
    pub raw: RawFrame,
    pub snr_db: f64,
    pub seed: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn element_positions_follow_pitch() {
        let g = ArrayGeometry::default();
        let pos = g.element_positions();
        assert_eq!(pos.len(), 128);
        for (j, &p) in pos.iter().enumerate() {
            assert_eq!(p, 0.1e-3 * (j as f64 - 63.5));
        }
        for w in pos.windows(2) {
            assert!(w[1] > w[0]);
            assert!((w[1] - w[0] - 0.1e-3).abs() < 1e-15);
        }
    }

    #[test]
    fn wavelength_is_derived_from_sound_speed() {
        let g = ArrayGeometry::default();
        assert!((g.wavelength() - 1540.0 / 15.63e6).abs() < 1e-18);
        g.check_sound_speed(1540.0).unwrap();
        assert!(g.check_sound_speed(1480.0).is_err());
    }

    #[test]
    fn geometry_rejects_bad_inputs() {
        assert!(ArrayGeometry::new(1, 1e-4, 1e6, 1540.0).is_err());
        assert!(ArrayGeometry::new(8, 0.0, 1e6, 1540.0).is_err());
        assert!(ArrayGeometry::new(8, 1e-4, 1e6, -1.0).is_err());
    }

    #[test]
    fn geometry_serde_roundtrip() {
        let g = ArrayGeometry::default();
        let s = serde_json::to_string(&g).unwrap();
        let back: ArrayGeometry = serde_json::from_str(&s).unwrap();
        assert_eq!(g, back);
    }

    #[test]
    fn interpolation_taps_range_rule() {
        let acq = AcquisitionParams {
            sample_count: 100,
            ..Default::default()
        };
        assert!(acq.interpolation_taps(-1e-3).is_none());
        let beyond = 100.0 / acq.sampling_rate * acq.sound_speed;
        assert!(acq.interpolation_taps(beyond).is_none());
        let unit = AcquisitionParams {
            sample_count: 100,
            sampling_rate: 1.0,
            sound_speed: 1.0,
            acquisition_delay: 0.0,
        };
        assert_eq!(unit.interpolation_taps(99.0), Some((98, 1.0)));
        assert_eq!(unit.interpolation_taps(98.25), Some((98, 0.25)));
        assert_eq!(unit.interpolation_taps(0.0), Some((0, 0.0)));
    }

    #[test]
    fn default_grid_matches_array_span() {
        let g = GridSpec::default();
        assert_eq!(g.shape(), (512, 128));
        assert!((g.x(0) + 6.35e-3).abs() < 1e-15);
        assert!((g.x(127) - 6.35e-3).abs() < 1e-12);
        assert!((g.z(511) - 25.6e-3).abs() < 1e-12);
    }

    #[test]
    fn raw_frame_checks_shape_and_finiteness() {
        let g = ArrayGeometry::default();
        let acq = AcquisitionParams {
            sample_count: 4,
            ..Default::default()
        };
        assert!(RawFrame::new(Array2::zeros((4, 127)), g.clone(), acq).is_err());
        let mut d = Array2::zeros((4, 128));
        d[[0, 0]] = f64::NAN;
        assert!(matches!(RawFrame::new(d, g, acq), Err(Error::NonFinite(_))));
    }
}
