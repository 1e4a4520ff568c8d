//! Python bindings: geometry types, the forward operator, the delay LUT,
//! the beamformers and solvers, metrics and dataset I/O. Arrays cross the
//! boundary as float64 numpy arrays.

use std::path::PathBuf;

use ndarray::Array2;
use numpy::{IntoPyArray, PyArray1, PyArray2, PyArray3, PyReadonlyArray2, PyReadonlyArray3};
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use parecon::beamform::{self, DasConfig, DmasConfig, MvConfig};
use parecon::delay::DelayLut;
use parecon::forward::{self, ForwardConfig, ImpulseResponse};
use parecon::inverse::{self, CsConfig, KspaceConfig, StepSize};
use parecon::metrics::{self, HankelSpec, SsimParams};
use parecon::phantom::{self, AugmentSpec, MaskSource};
use parecon::{dataset, DelayTensor, ImageGrid, RawFrame};

fn err(e: parecon::Error) -> PyErr {
    use parecon::Error as E;
    match e {
        E::Io { .. } | E::Image { .. } | E::MissingManifest(_) => PyOSError::new_err(e.to_string()),
        E::Numerical(_) | E::NonFinite(_) | E::NoPeak { .. } => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

#[pyclass(
    name = "ArrayGeometry",
    module = "parecon",
    frozen,
    skip_from_py_object
)]
#[derive(Clone)]
struct Geometry(parecon::ArrayGeometry);

#[pymethods]
impl Geometry {
    #[new]
    #[pyo3(signature = (element_count = 128, pitch = 0.1e-3, center_frequency = 15.63e6, sound_speed = 1540.0))]
    fn new(
        element_count: usize,
        pitch: f64,
        center_frequency: f64,
        sound_speed: f64,
    ) -> PyResult<Self> {
        parecon::ArrayGeometry::new(element_count, pitch, center_frequency, sound_speed)
            .map(Self)
            .map_err(err)
    }

    #[getter]
    fn element_count(&self) -> usize {
        self.0.element_count()
    }

    #[getter]
    fn pitch(&self) -> f64 {
        self.0.pitch()
    }

    #[getter]
    fn center_frequency(&self) -> f64 {
        self.0.center_frequency()
    }

    #[getter]
    fn sound_speed(&self) -> f64 {
        self.0.sound_speed()
    }

    /// Lateral element centres in metres.
    fn element_positions<'py>(&self, py: Python<'py>) -> Bound<'py, PyArray1<f64>> {
        PyArray1::from_slice(py, self.0.element_positions())
    }

    fn __repr__(&self) -> String {
        format!(
            "ArrayGeometry(element_count={}, pitch={}, center_frequency={})",
            self.0.element_count(),
            self.0.pitch(),
            self.0.center_frequency()
        )
    }
}

#[pyclass(
    name = "AcquisitionParams",
    module = "parecon",
    frozen,
    skip_from_py_object
)]
#[derive(Clone)]
struct Acquisition(parecon::AcquisitionParams);

#[pymethods]
impl Acquisition {
    #[new]
    #[pyo3(signature = (sample_count = 2048, sampling_rate = 62.5e6, sound_speed = 1540.0, acquisition_delay = 0.0))]
    fn new(
        sample_count: usize,
        sampling_rate: f64,
        sound_speed: f64,
        acquisition_delay: f64,
    ) -> PyResult<Self> {
        let a = parecon::AcquisitionParams {
            sample_count,
            sampling_rate,
            sound_speed,
            acquisition_delay,
        };
        a.validate().map_err(err)?;
        Ok(Self(a))
    }

    #[getter]
    fn sample_count(&self) -> usize {
        self.0.sample_count
    }

    #[getter]
    fn sampling_rate(&self) -> f64 {
        self.0.sampling_rate
    }

    #[getter]
    fn sound_speed(&self) -> f64 {
        self.0.sound_speed
    }

    #[getter]
    fn acquisition_delay(&self) -> f64 {
        self.0.acquisition_delay
    }
}

#[pyclass(name = "GridSpec", module = "parecon", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Grid(parecon::GridSpec);

#[pymethods]
impl Grid {
    #[new]
    #[pyo3(signature = (nz = 512, nx = 128, z_res = 0.05e-3, x_res = 0.1e-3, z_origin = None, x_origin = None))]
    fn new(
        nz: usize,
        nx: usize,
        z_res: f64,
        x_res: f64,
        z_origin: Option<f64>,
        x_origin: Option<f64>,
    ) -> PyResult<Self> {
        let base = parecon::GridSpec::centered(nz, nx, z_res, x_res);
        let g = parecon::GridSpec {
            z_origin: z_origin.unwrap_or(base.z_origin),
            x_origin: x_origin.unwrap_or(base.x_origin),
            ..base
        };
        g.validate().map_err(err)?;
        Ok(Self(g))
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    #[getter]
    fn z_res(&self) -> f64 {
        self.0.z_res
    }

    #[getter]
    fn x_res(&self) -> f64 {
        self.0.x_res
    }

    #[getter]
    fn z_origin(&self) -> f64 {
        self.0.z_origin
    }

    #[getter]
    fn x_origin(&self) -> f64 {
        self.0.x_origin
    }
}

fn frame(
    data: PyReadonlyArray2<'_, f64>,
    geometry: &Geometry,
    acq: &Acquisition,
) -> PyResult<RawFrame> {
    RawFrame::new(data.as_array().to_owned(), geometry.0.clone(), acq.0).map_err(err)
}

fn tensor(
    data: PyReadonlyArray3<'_, f64>,
    geometry: &Geometry,
    grid: &Grid,
) -> PyResult<DelayTensor> {
    DelayTensor::new(data.as_array().to_owned(), grid.0, geometry.0.clone()).map_err(err)
}

#[pyclass(name = "ForwardOperator", module = "parecon", frozen)]
struct Operator(forward::ForwardOperator);

#[pymethods]
impl Operator {
    /// `impulse` is an array of taps at the acquisition sampling rate; the
    /// built-in probe pulse is used when it is omitted.
    #[new]
    #[pyo3(signature = (grid, geometry, acquisition, impulse = None, use_derivative = true, use_directivity = true, noise_std = 0.0, grueneisen_scale = 1e-3))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        grid: &Grid,
        geometry: &Geometry,
        acquisition: &Acquisition,
        impulse: Option<Vec<f64>>,
        use_derivative: bool,
        use_directivity: bool,
        noise_std: f64,
        grueneisen_scale: f64,
    ) -> PyResult<Self> {
        let fs = acquisition.0.sampling_rate;
        let h = match impulse {
            Some(taps) => ImpulseResponse::new(taps, fs).map_err(err)?,
            None => ImpulseResponse::default_probe(fs),
        };
        let cfg = ForwardConfig {
            use_derivative,
            use_directivity,
            noise_std,
            grueneisen_scale,
        };
        forward::ForwardOperator::new(grid.0, geometry.0.clone(), acquisition.0, h, cfg)
            .map(Self)
            .map_err(err)
    }

    /// Noise-free raw frame (K x J) of an absorption image.
    fn apply<'py>(
        &self,
        py: Python<'py>,
        image: PyReadonlyArray2<'py, f64>,
    ) -> PyResult<Bound<'py, PyArray2<f64>>> {
        let image = image.as_array().to_owned();
        let out = py.detach(|| self.0.apply(&image)).map_err(err)?;
        Ok(out.into_pyarray(py))
    }

    fn adjoint<'py>(
        &self,
        py: Python<'py>,
        frame: PyReadonlyArray2<'py, f64>,
    ) -> PyResult<Bound<'py, PyArray2<f64>>> {
        let frame = frame.as_array().to_owned();
        let out = py.detach(|| self.0.adjoint(&frame)).map_err(err)?;
        Ok(out.into_pyarray(py))
    }

    /// Raw frame including the configured noise, drawn from `seed`.
    #[pyo3(signature = (image, seed = 0))]
    fn simulate<'py>(
        &self,
        py: Python<'py>,
        image: PyReadonlyArray2<'py, f64>,
        seed: u64,
    ) -> PyResult<Bound<'py, PyArray2<f64>>> {
        let image = ImageGrid::new(image.as_array().to_owned(), *self.0.grid()).map_err(err)?;
        let sim = py.detach(|| self.0.simulate(&image, seed)).map_err(err)?;
        Ok(sim.frame.data.into_pyarray(py))
    }

    /// Squared largest singular value, estimated by power iteration.
    fn lipschitz(&self, py: Python<'_>) -> PyResult<f64> {
        py.detach(|| self.0.lipschitz()).map_err(err)
    }
}

#[pyclass(name = "DelayLut", module = "parecon", frozen)]
struct Lut {
    lut: DelayLut,
    grid: parecon::GridSpec,
}

#[pymethods]
impl Lut {
    #[new]
    fn new(
        py: Python<'_>,
        grid: &Grid,
        geometry: &Geometry,
        acquisition: &Acquisition,
    ) -> PyResult<Self> {
        let g = grid.0;
        let lut = py
            .detach(|| DelayLut::build(&g, &geometry.0, &acquisition.0))
            .map_err(err)?;
        Ok(Self { lut, grid: g })
    }

    /// Delay tensor (nz x nx x J) of a raw frame.
    fn apply<'py>(
        &self,
        py: Python<'py>,
        frame: PyReadonlyArray2<'py, f64>,
    ) -> PyResult<Bound<'py, PyArray3<f64>>> {
        let f = RawFrame::new(
            frame.as_array().to_owned(),
            self.lut.geometry().clone(),
            *self.lut.acquisition(),
        )
        .map_err(err)?;
        let t = py.detach(|| self.lut.apply(&f)).map_err(err)?;
        Ok(t.data.into_pyarray(py))
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        (
            self.grid.nz,
            self.grid.nx,
            self.lut.geometry().element_count(),
        )
    }

    #[getter]
    fn nonzeros(&self) -> usize {
        self.lut.nonzeros()
    }

    #[getter]
    fn key(&self) -> String {
        self.lut.key()
    }
}

#[pyfunction]
#[pyo3(signature = (tensor, geometry, grid, f_number = 0.5, apply_hilbert = true))]
fn das<'py>(
    py: Python<'py>,
    tensor: PyReadonlyArray3<'py, f64>,
    geometry: &Geometry,
    grid: &Grid,
    f_number: f64,
    apply_hilbert: bool,
) -> PyResult<Bound<'py, PyArray2<f64>>> {
    let t = self::tensor(tensor, geometry, grid)?;
    let cfg = DasConfig {
        f_number,
        apply_hilbert,
        ..Default::default()
    };
    let img = py.detach(|| beamform::das(&t, &cfg)).map_err(err)?;
    Ok(img.data.into_pyarray(py))
}

#[pyfunction]
#[pyo3(signature = (tensor, geometry, grid, highpass_cutoff = 6e6, filter_order = 6, f_number = 0.0))]
fn dmas<'py>(
    py: Python<'py>,
    tensor: PyReadonlyArray3<'py, f64>,
    geometry: &Geometry,
    grid: &Grid,
    highpass_cutoff: f64,
    filter_order: usize,
    f_number: f64,
) -> PyResult<Bound<'py, PyArray2<f64>>> {
    let t = self::tensor(tensor, geometry, grid)?;
    let cfg = DmasConfig {
        highpass_cutoff,
        filter_order,
        f_number,
        ..Default::default()
    };
    let img = py.detach(|| beamform::dmas(&t, &cfg)).map_err(err)?;
    Ok(img.data.into_pyarray(py))
}

/// Returns the image and the per-pixel weight sums.
#[pyfunction]
#[pyo3(signature = (tensor, geometry, grid, subarray_length = 32, axial_averages = 2, diagonal_loading = 1e-2, f_number = 0.5, apply_hilbert = true))]
#[allow(clippy::too_many_arguments)]
fn minimum_variance<'py>(
    py: Python<'py>,
    tensor: PyReadonlyArray3<'py, f64>,
    geometry: &Geometry,
    grid: &Grid,
    subarray_length: usize,
    axial_averages: usize,
    diagonal_loading: f64,
    f_number: f64,
    apply_hilbert: bool,
) -> PyResult<(Bound<'py, PyArray2<f64>>, Bound<'py, PyArray2<f64>>)> {
    let t = self::tensor(tensor, geometry, grid)?;
    let cfg = MvConfig {
        subarray_length,
        axial_averages,
        diagonal_loading,
        f_number,
        apply_hilbert,
    };
    let out = py
        .detach(|| beamform::minimum_variance(&t, &cfg))
        .map_err(err)?;
    Ok((
        out.image.data.into_pyarray(py),
        out.weight_sums.into_pyarray(py),
    ))
}

/// ISTA with TV and wavelet regularization. `step=None` selects `1/L`.
/// Returns the image and the objective after every iteration.
#[pyfunction]
#[pyo3(signature = (frame, operator, tv_weight = 0.02, wavelet_weight = 0.005, max_iters = 300, step = None, grad_norm_tol = 1e-4))]
#[allow(clippy::too_many_arguments)]
fn ista<'py>(
    py: Python<'py>,
    frame: PyReadonlyArray2<'py, f64>,
    operator: &Operator,
    tv_weight: f64,
    wavelet_weight: f64,
    max_iters: usize,
    step: Option<f64>,
    grad_norm_tol: f64,
) -> PyResult<(Bound<'py, PyArray2<f64>>, Vec<f64>)> {
    let y = frame.as_array().to_owned();
    let cfg = CsConfig {
        tv_weight,
        wavelet_weight,
        max_iters,
        step: step.map_or(StepSize::Auto, StepSize::Fixed),
        grad_norm_tol,
        ..Default::default()
    };
    let out = py
        .detach(|| inverse::ista(&operator.0, &y, &cfg))
        .map_err(err)?;
    let objectives = out.log.iter().map(|r| r.objective).collect();
    Ok((out.image.into_pyarray(py), objectives))
}

#[pyfunction]
#[pyo3(signature = (frame, geometry, acquisition, grid, band_low = 0.0, band_high = None))]
fn kspace<'py>(
    py: Python<'py>,
    frame: PyReadonlyArray2<'py, f64>,
    geometry: &Geometry,
    acquisition: &Acquisition,
    grid: &Grid,
    band_low: f64,
    band_high: Option<f64>,
) -> PyResult<Bound<'py, PyArray2<f64>>> {
    let f = self::frame(frame, geometry, acquisition)?;
    let cfg = KspaceConfig {
        band_low,
        band_high,
        ..Default::default()
    };
    let g = grid.0;
    let img = py
        .detach(|| inverse::kspace_reconstruct(&f, &g, &cfg))
        .map_err(err)?;
    Ok(img.data.into_pyarray(py))
}

#[pyfunction]
#[pyo3(signature = (truth, estimate, i_max = 1.0))]
fn psnr(
    truth: PyReadonlyArray2<'_, f64>,
    estimate: PyReadonlyArray2<'_, f64>,
    i_max: f64,
) -> PyResult<f64> {
    metrics::psnr(
        &truth.as_array().to_owned(),
        &estimate.as_array().to_owned(),
        i_max,
    )
    .map_err(err)
}

/// Global SSIM with the usual constants.
#[pyfunction]
fn ssim(truth: PyReadonlyArray2<'_, f64>, estimate: PyReadonlyArray2<'_, f64>) -> PyResult<f64> {
    metrics::ssim(
        &truth.as_array().to_owned(),
        &estimate.as_array().to_owned(),
        &SsimParams::default(),
    )
    .map_err(err)
}

/// `(psnr, ssim)` after normalizing both images to unit peak.
#[pyfunction]
fn compare(
    truth: PyReadonlyArray2<'_, f64>,
    estimate: PyReadonlyArray2<'_, f64>,
) -> PyResult<(f64, f64)> {
    let c = metrics::compare(
        &truth.as_array().to_owned(),
        &estimate.as_array().to_owned(),
        &SsimParams::default(),
    )
    .map_err(err)?;
    Ok((c.psnr, c.ssim))
}

#[pyfunction]
#[pyo3(signature = (tensor, geometry, grid, d1, d2, tol = 1e-6))]
fn hankel_rank(
    py: Python<'_>,
    tensor: PyReadonlyArray3<'_, f64>,
    geometry: &Geometry,
    grid: &Grid,
    d1: usize,
    d2: usize,
    tol: f64,
) -> PyResult<usize> {
    let t = self::tensor(tensor, geometry, grid)?;
    py.detach(|| metrics::hankel_rank_profile(&t, HankelSpec { d1, d2 }, tol))
        .map(|p| p.rank)
        .map_err(err)
}

/// Generates `count` procedural phantoms through `operator` and writes the
/// paired dataset to `path`. Returns the raw-frame noise level.
#[pyfunction]
#[pyo3(signature = (path, count, operator, noise_std = 1.0, seed = 0))]
fn generate_dataset(
    py: Python<'_>,
    path: PathBuf,
    count: usize,
    operator: &Operator,
    noise_std: f64,
    seed: u64,
) -> PyResult<f64> {
    py.detach(|| {
        let set = phantom::generate_dataset(
            count,
            &AugmentSpec::default(),
            &operator.0,
            noise_std,
            MaskSource::Procedural,
            seed,
        )?;
        let options = dataset::WriteOptions {
            noise_std: Some(set.noise_std),
            source: Some("python".into()),
        };
        dataset::write_dataset_with(&set.records, &path, &options)?;
        Ok(set.noise_std)
    })
    .map_err(err)
}

/// Records of a paired dataset as dicts with `ground_truth`, `raw`,
/// `snr_db` and `seed`.
#[pyfunction]
fn read_dataset<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let records = dataset::read_dataset(&path).map_err(err)?;
    records
        .into_iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("ground_truth", r.ground_truth.data.into_pyarray(py))?;
            d.set_item("raw", r.raw.data.into_pyarray(py))?;
            d.set_item("snr_db", r.snr_db)?;
            d.set_item("seed", r.seed)?;
            Ok(d)
        })
        .collect()
}

/// Images of an image set (or the ground truths of a paired set).
#[pyfunction]
fn read_images<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Vec<Bound<'py, PyArray2<f64>>>> {
    let (_, images) = dataset::read_images(&path).map_err(err)?;
    Ok(images
        .into_iter()
        .map(|im| im.data.into_pyarray(py))
        .collect())
}

/// `(frame, tensor)` of a golden-tensor directory.
#[pyfunction]
fn read_golden_tensor<'py>(
    py: Python<'py>,
    path: PathBuf,
) -> PyResult<(Bound<'py, PyArray2<f64>>, Bound<'py, PyArray3<f64>>)> {
    let (frame, tensor) = dataset::read_golden_tensor(&path).map_err(err)?;
    Ok((frame.data.into_pyarray(py), tensor.data.into_pyarray(py)))
}

/// 8-bit log-compressed preview over `dynamic_range_db`.
#[pyfunction]
#[pyo3(signature = (image, dynamic_range_db = 40.0))]
fn log_compress<'py>(
    py: Python<'py>,
    image: PyReadonlyArray2<'py, f64>,
    dynamic_range_db: f64,
) -> Bound<'py, PyArray2<u8>> {
    let img: Array2<f64> = image.as_array().to_owned();
    parecon::preview::log_compress(&img, dynamic_range_db).into_pyarray(py)
}

#[pymodule]
#[pyo3(name = "parecon")]
fn parecon_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Geometry>()?;
    m.add_class::<Acquisition>()?;
    m.add_class::<Grid>()?;
    m.add_class::<Operator>()?;
    m.add_class::<Lut>()?;
    m.add_function(wrap_pyfunction!(das, m)?)?;
    m.add_function(wrap_pyfunction!(dmas, m)?)?;
    m.add_function(wrap_pyfunction!(minimum_variance, m)?)?;
    m.add_function(wrap_pyfunction!(ista, m)?)?;
    m.add_function(wrap_pyfunction!(kspace, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(hankel_rank, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(read_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(read_images, m)?)?;
    m.add_function(wrap_pyfunction!(read_golden_tensor, m)?)?;
    m.add_function(wrap_pyfunction!(log_compress, m)?)?;
    Ok(())
}
