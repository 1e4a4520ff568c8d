//! On-disk dataset directories.
//!
//! A dataset is a directory holding `manifest.json` plus one headerless blob
//! per array (little-endian binary32, row-major). Paired sets carry a ground
//! truth image and its raw frame per record; image sets carry reconstructed
//! images only and are what the metrics batch mode compares against.
//!
//! A golden-tensor directory holds `tensor.json`, one raw frame and the
//! delay tensor computed from it, so an independent implementation of the
//! delay transform can be checked against this one.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    AcquisitionParams, ArrayGeometry, DatasetRecord, DelayTensor, GridSpec, ImageGrid, RawFrame,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SCHEMA_VERSION: u32 = 1;
pub const TENSOR_MANIFEST_FILE: &str = "tensor.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Paired,
    Images,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobRef {
    pub file: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordEntry {
    pub index: usize,
    pub snr_db: f64,
    pub seed: u64,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<BlobRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<BlobRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<BlobRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub kind: DatasetKind,
    pub geometry: ArrayGeometry,
    pub acquisition: AcquisitionParams,
    pub grid: GridSpec,
    /// Effective noise standard deviation of the stored raw frames, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_std: Option<f64>,
    /// Free-form label of what produced an image set (e.g. the method name).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    pub records: Vec<RecordEntry>,
}

impl Manifest {
    pub fn train_count(&self) -> usize {
        self.records
            .iter()
            .filter(|r| r.split == Split::Train)
            .count()
    }
}

/// Number of training records when `n` records are split 80/20, rounding half up.
pub fn train_count(n: usize) -> usize {
    (4 * n + 2) / 5
}

pub fn split_for(index: usize, n: usize) -> Split {
    if index < train_count(n) {
        Split::Train
    } else {
        Split::Validation
    }
}

/// Extra manifest fields set by producers of a dataset.
#[derive(Debug, Clone, Default)]
pub struct WriteOptions {
    pub noise_std: Option<f64>,
    pub source: Option<String>,
}

pub fn write_dataset(records: &[DatasetRecord], path: &Path) -> Result<()> {
    write_dataset_with(records, path, &WriteOptions::default())
}

pub fn write_dataset_with(
    records: &[DatasetRecord],
    path: &Path,
    options: &WriteOptions,
) -> Result<()> {
    let first = records
        .first()
        .ok_or_else(|| Error::param("records", "cannot write an empty dataset"))?;
    let grid = first.ground_truth.grid;
    let geometry = first.raw.geometry.clone();
    let acquisition = first.raw.acquisition;
    for (index, r) in records.iter().enumerate() {
        if r.ground_truth.grid != grid
            || r.ground_truth.data.dim() != grid.shape()
            || r.raw.geometry != geometry
            || r.raw.acquisition != acquisition
            || r.raw.data.dim() != (acquisition.sample_count, geometry.element_count())
        {
            return Err(Error::Record {
                index,
                reason: "record shapes differ from record 0".into(),
            });
        }
        if r.ground_truth.data.iter().any(|v| !v.is_finite())
            || r.raw.data.iter().any(|v| !v.is_finite())
            || !r.snr_db.is_finite()
        {
            return Err(Error::Record {
                index,
                reason: "non-finite value".into(),
            });
        }
    }

    fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
    let n = records.len();
    let mut entries = Vec::with_capacity(n);
    for (index, r) in records.iter().enumerate() {
        let gt = format!("gt_{index:05}.bin");
        let raw = format!("raw_{index:05}.bin");
        write_blob(&path.join(&gt), &r.ground_truth.data)?;
        write_blob(&path.join(&raw), &r.raw.data)?;
        entries.push(RecordEntry {
            index,
            snr_db: r.snr_db,
            seed: r.seed,
            split: split_for(index, n),
            ground_truth: Some(BlobRef {
                file: gt,
                shape: [grid.nz, grid.nx],
            }),
            raw: Some(BlobRef {
                file: raw,
                shape: [acquisition.sample_count, geometry.element_count()],
            }),
            image: None,
        });
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        kind: DatasetKind::Paired,
        geometry,
        acquisition,
        grid,
        noise_std: options.noise_std,
        source: options.source.clone(),
        records: entries,
    };
    write_manifest(path, &manifest)
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let file = path.join(MANIFEST_FILE);
    let text = match fs::read_to_string(&file) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::MissingManifest(file))
        }
        Err(e) => return Err(Error::io(file, e)),
    };
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(Error::Manifest(format!(
            "unsupported schema version {}",
            manifest.schema_version
        )));
    }
    manifest
        .geometry
        .check_sound_speed(manifest.acquisition.sound_speed)?;
    manifest.acquisition.validate()?;
    manifest.grid.validate()?;
    Ok(manifest)
}

pub fn read_dataset(path: &Path) -> Result<Vec<DatasetRecord>> {
    let manifest = read_manifest(path)?;
    if manifest.kind != DatasetKind::Paired {
        return Err(Error::Manifest("expected a paired dataset".into()));
    }
    let grid = manifest.grid;
    let raw_shape = [
        manifest.acquisition.sample_count,
        manifest.geometry.element_count(),
    ];
    manifest
        .records
        .iter()
        .enumerate()
        .map(|(index, entry)| {
            let gt_ref = entry.ground_truth.as_ref().ok_or_else(|| Error::Record {
                index,
                reason: "missing ground_truth blob".into(),
            })?;
            let raw_ref = entry.raw.as_ref().ok_or_else(|| Error::Record {
                index,
                reason: "missing raw blob".into(),
            })?;
            let gt = read_blob(path, gt_ref, [grid.nz, grid.nx], index)?;
            let raw = read_blob(path, raw_ref, raw_shape, index)?;
            Ok(DatasetRecord {
                ground_truth: ImageGrid { data: gt, grid },
                raw: RawFrame {
                    data: raw,
                    geometry: manifest.geometry.clone(),
                    acquisition: manifest.acquisition,
                },
                snr_db: entry.snr_db,
                seed: entry.seed,
            })
        })
        .collect()
}

/// Images of a dataset: the reconstructions of an image set, or the ground
/// truths of a paired set.
pub fn read_images(path: &Path) -> Result<(Manifest, Vec<ImageGrid>)> {
    let manifest = read_manifest(path)?;
    let grid = manifest.grid;
    let images = manifest
        .records
        .iter()
        .enumerate()
        .map(|(index, entry)| {
            let blob = match manifest.kind {
                DatasetKind::Paired => entry.ground_truth.as_ref(),
                DatasetKind::Images => entry.image.as_ref(),
            }
            .ok_or_else(|| Error::Record {
                index,
                reason: "missing image blob".into(),
            })?;
            let data = read_blob(path, blob, [grid.nz, grid.nx], index)?;
            Ok(ImageGrid { data, grid })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, images))
}

/// Writes reconstructed images, copying record metadata from `reference`
/// (the manifest of the dataset they were reconstructed from).
pub fn write_images(
    images: &[ImageGrid],
    reference: &Manifest,
    source: &str,
    path: &Path,
) -> Result<()> {
    if images.len() != reference.records.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} images", reference.records.len()),
            found: format!("{}", images.len()),
        });
    }
    let grid = images.first().map(|im| im.grid).unwrap_or(reference.grid);
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::with_capacity(images.len());
    for (index, (image, entry)) in images.iter().zip(&reference.records).enumerate() {
        if image.grid != grid {
            return Err(Error::Record {
                index,
                reason: "image grid differs from image 0".into(),
            });
        }
        if image.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Record {
                index,
                reason: "non-finite value".into(),
            });
        }
        let file = format!("img_{index:05}.bin");
        write_blob(&path.join(&file), &image.data)?;
        records.push(RecordEntry {
            index,
            snr_db: entry.snr_db,
            seed: entry.seed,
            split: entry.split,
            ground_truth: None,
            raw: None,
            image: Some(BlobRef {
                file,
                shape: [grid.nz, grid.nx],
            }),
        });
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        kind: DatasetKind::Images,
        geometry: reference.geometry.clone(),
        acquisition: reference.acquisition,
        grid,
        noise_std: reference.noise_std,
        source: Some(source.to_string()),
        records,
    };
    write_manifest(path, &manifest)
}

fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    let file = path.join(MANIFEST_FILE);
    fs::write(&file, text).map_err(|e| Error::io(file, e))
}

/// Writes `data` as headerless little-endian binary32, row-major.
pub fn write_blob(file: &Path, data: &Array2<f64>) -> Result<()> {
    write_values(file, data.iter().copied(), data.len())
}

fn write_values(file: &Path, values: impl Iterator<Item = f64>, len: usize) -> Result<()> {
    let mut bytes = Vec::with_capacity(len * 4);
    for v in values {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut f = fs::File::create(file).map_err(|e| Error::io(file, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(file, e))
}

fn read_values(file: &Path, index: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(file).map_err(|e| Error::io(file, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::TruncatedBlob {
            index,
            path: file.to_path_buf(),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

/// Describes a golden-tensor directory. The tensor blob is `[z, x, j]`
/// row-major; the frame blob is `[sample, element]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorManifest {
    pub schema_version: u32,
    pub geometry: ArrayGeometry,
    pub acquisition: AcquisitionParams,
    pub grid: GridSpec,
    pub frame: BlobRef,
    pub tensor_file: String,
    pub tensor_shape: [usize; 3],
}

/// Writes `frame` and the delay tensor computed from it.
pub fn write_golden_tensor(path: &Path, frame: &RawFrame, tensor: &DelayTensor) -> Result<()> {
    if tensor.geometry != frame.geometry {
        return Err(Error::GeometryMismatch(
            "tensor and frame geometries differ".into(),
        ));
    }
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
    let (nz, nx, j) = tensor.data.dim();
    write_blob(&path.join("frame.bin"), &frame.data)?;
    write_values(
        &path.join("tensor.bin"),
        tensor.data.iter().copied(),
        tensor.data.len(),
    )?;
    let manifest = TensorManifest {
        schema_version: SCHEMA_VERSION,
        geometry: frame.geometry.clone(),
        acquisition: frame.acquisition,
        grid: tensor.grid,
        frame: BlobRef {
            file: "frame.bin".into(),
            shape: [
                frame.acquisition.sample_count,
                frame.geometry.element_count(),
            ],
        },
        tensor_file: "tensor.bin".into(),
        tensor_shape: [nz, nx, j],
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    let file = path.join(TENSOR_MANIFEST_FILE);
    fs::write(&file, text).map_err(|e| Error::io(file, e))
}

pub fn read_golden_tensor(path: &Path) -> Result<(RawFrame, DelayTensor)> {
    let file = path.join(TENSOR_MANIFEST_FILE);
    let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
    let m: TensorManifest = serde_json::from_str(&text)?;
    if m.schema_version != SCHEMA_VERSION {
        return Err(Error::Manifest(format!(
            "unsupported schema version {}",
            m.schema_version
        )));
    }
    let frame_data = read_blob(path, &m.frame, m.frame.shape, 0)?;
    let frame = RawFrame::new(frame_data, m.geometry.clone(), m.acquisition)?;
    let [nz, nx, j] = m.tensor_shape;
    let values = read_values(&path.join(&m.tensor_file), 0)?;
    if values.len() != nz * nx * j {
        return Err(Error::DimensionMismatch {
            index: 0,
            expected: format!("{nz}x{nx}x{j}"),
            found: format!("blob holds {} values", values.len()),
        });
    }
    let data = Array3::from_shape_vec((nz, nx, j), values).map_err(|e| Error::Record {
        index: 0,
        reason: e.to_string(),
    })?;
    let tensor = DelayTensor::new(data, m.grid, m.geometry)?;
    Ok((frame, tensor))
}

fn read_blob(
    dir: &Path,
    blob: &BlobRef,
    expected: [usize; 2],
    index: usize,
) -> Result<Array2<f64>> {
    if blob.shape != expected {
        return Err(Error::DimensionMismatch {
            index,
            expected: format!("{}x{}", expected[0], expected[1]),
            found: format!("blob entry declares {}x{}", blob.shape[0], blob.shape[1]),
        });
    }
    let file: PathBuf = dir.join(&blob.file);
    let [rows, cols] = expected;
    let values = read_values(&file, index)?;
    let count = values.len();
    if count != rows * cols {
        let found = if cols > 0 && count % cols == 0 {
            format!("blob holds {}x{}", count / cols, cols)
        } else {
            format!("blob holds {count} values")
        };
        return Err(Error::DimensionMismatch {
            index,
            expected: format!("{rows}x{cols}"),
            found,
        });
    }
    Array2::from_shape_vec((rows, cols), values).map_err(|e| Error::Record {
        index,
        reason: e.to_string(),
    })
}

/// Rounds every payload through binary32 so in-memory records equal what a
/// write followed by a read produces.
pub fn quantize(data: &mut Array2<f64>) {
    data.mapv_inplace(|v| v as f32 as f64);
}
