//! Sparse lookup table turning a `K x J` raw frame into the `N_z x N_x x J`
//! delay tensor: entry `(i, j)` reads channel `j` at the one-way time of
//! flight from pixel `i`, linearly interpolated between two samples.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array3;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{AcquisitionParams, ArrayGeometry, DelayTensor, GridSpec, RawFrame};

const EMPTY: u32 = u32::MAX;
const CACHE_MAGIC: &[u8; 8] = b"PALUT\x00\x00\x01";

/// Immutable delay operator. Entries are stored pixel-major
/// (`(z * nx + x) * J + j`) as a lower sample index plus the weight of the
/// upper sample; the lower sample weighs `1 - w`.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayLut {
    grid: GridSpec,
    geometry: ArrayGeometry,
    acquisition: AcquisitionParams,
    lower: Vec<u32>,
    upper_weight: Vec<f64>,
}

#[derive(Serialize)]
struct KeyFields<'a> {
    grid: &'a GridSpec,
    geometry: &'a ArrayGeometry,
    acquisition: &'a AcquisitionParams,
}

impl DelayLut {
    pub fn build(
        grid: &GridSpec,
        geometry: &ArrayGeometry,
        acquisition: &AcquisitionParams,
    ) -> Result<Self> {
        grid.validate()?;
        acquisition.validate()?;
        let j_count = geometry.element_count();
        let len = grid.pixel_count() * j_count;
        let mut lower = vec![EMPTY; len];
        let mut upper_weight = vec![0.0; len];
        let row_len = grid.nx * j_count;
        lower
            .par_chunks_mut(row_len)
            .zip(upper_weight.par_chunks_mut(row_len))
            .enumerate()
            .for_each(|(row, (lo, w))| {
                let z = grid.z(row);
                for col in 0..grid.nx {
                    let x = grid.x(col);
                    for (j, &xe) in geometry.element_positions().iter().enumerate() {
                        let dx = x - xe;
                        let r = (z * z + dx * dx).sqrt();
                        if let Some((k, frac)) = acquisition.interpolation_taps(r) {
                            lo[col * j_count + j] = k as u32;
                            w[col * j_count + j] = frac;
                        }
                    }
                }
            });
        Ok(Self {
            grid: *grid,
            geometry: geometry.clone(),
            acquisition: *acquisition,
            lower,
            upper_weight,
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

    /// Interpolation taps of pixel `(row, col)` and channel `j`:
    /// `((k, 1 - w), (k + 1, w))`, or `None` when out of range.
    pub fn entry(&self, row: usize, col: usize, j: usize) -> Option<((usize, f64), (usize, f64))> {
        let idx = (row * self.grid.nx + col) * self.geometry.element_count() + j;
        let k = self.lower[idx];
        (k != EMPTY).then(|| {
            let w = self.upper_weight[idx];
            ((k as usize, 1.0 - w), (k as usize + 1, w))
        })
    }

    /// Stored nonzero coefficients across the whole operator.
    pub fn nonzeros(&self) -> usize {
        self.lower
            .iter()
            .zip(&self.upper_weight)
            .filter(|(&k, _)| k != EMPTY)
            .map(|(_, &w)| usize::from(w != 0.0) + usize::from(1.0 - w != 0.0))
            .sum()
    }

    /// Largest number of raw samples feeding one tensor entry (at most 2).
    pub fn max_nonzeros_per_entry(&self) -> usize {
        self.lower
            .iter()
            .zip(&self.upper_weight)
            .filter(|(&k, _)| k != EMPTY)
            .map(|(_, &w)| usize::from(w != 0.0) + usize::from(1.0 - w != 0.0))
            .max()
            .unwrap_or(0)
    }

    pub fn empty_entries(&self) -> usize {
        self.lower.iter().filter(|&&k| k == EMPTY).count()
    }

    pub fn upper_weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.lower
            .iter()
            .zip(&self.upper_weight)
            .filter(|(&k, _)| k != EMPTY)
            .map(|(_, &w)| w)
    }

    pub fn apply(&self, frame: &RawFrame) -> Result<DelayTensor> {
        if frame.geometry != self.geometry {
            return Err(Error::GeometryMismatch(
                "frame geometry differs from LUT".into(),
            ));
        }
        if frame.acquisition != self.acquisition {
            return Err(Error::GeometryMismatch(
                "frame acquisition differs from LUT".into(),
            ));
        }
        let j_count = self.geometry.element_count();
        let y = frame
            .data
            .as_standard_layout()
            .into_owned()
            .into_raw_vec_and_offset()
            .0;
        let mut out = vec![0.0; self.lower.len()];
        let row_len = self.grid.nx * j_count;
        out.par_chunks_mut(row_len)
            .zip(self.lower.par_chunks(row_len))
            .zip(self.upper_weight.par_chunks(row_len))
            .for_each(|((dst, lo), w)| {
                for (e, (d, (&k, &w))) in dst.iter_mut().zip(lo.iter().zip(w)).enumerate() {
                    if k == EMPTY {
                        continue;
                    }
                    let idx = k as usize * j_count + e % j_count;
                    let y0 = y[idx];
                    let y1 = y[idx + j_count];
                    *d = (1.0 - w) * y0 + w * y1;
                }
            });
        let data = Array3::from_shape_vec((self.grid.nz, self.grid.nx, j_count), out)
            .expect("tensor shape");
        Ok(DelayTensor {
            data,
            grid: self.grid,
            geometry: self.geometry.clone(),
        })
    }

    /// Hex SHA-256 of the canonical JSON of the inputs the LUT depends on.
    pub fn cache_key(
        grid: &GridSpec,
        geometry: &ArrayGeometry,
        acquisition: &AcquisitionParams,
    ) -> String {
        let json = serde_json::to_vec(&KeyFields {
            grid,
            geometry,
            acquisition,
        })
        .expect("serializable key");
        Sha256::digest(&json)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn key(&self) -> String {
        Self::cache_key(&self.grid, &self.geometry, &self.acquisition)
    }

    /// File name used inside a cache directory.
    pub fn cache_file_name(key: &str) -> String {
        format!("lut_{}.bin", &key[..16])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(8 + 64 + 24 + self.lower.len() * 12);
        bytes.extend_from_slice(CACHE_MAGIC);
        bytes.extend_from_slice(self.key().as_bytes());
        for n in [self.grid.nz, self.grid.nx, self.geometry.element_count()] {
            bytes.extend_from_slice(&(n as u64).to_le_bytes());
        }
        for k in &self.lower {
            bytes.extend_from_slice(&k.to_le_bytes());
        }
        for w in &self.upper_weight {
            bytes.extend_from_slice(&w.to_le_bytes());
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    /// Loads a cache file, rejecting it unless its key matches the inputs.
    pub fn load(
        path: &Path,
        grid: &GridSpec,
        geometry: &ArrayGeometry,
        acquisition: &AcquisitionParams,
    ) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let bad = |why: &str| Error::Cache {
            path: path.to_path_buf(),
            reason: why.into(),
        };
        if bytes.len() < 96 || &bytes[..8] != CACHE_MAGIC {
            return Err(bad("not a LUT cache file"));
        }
        let key = Self::cache_key(grid, geometry, acquisition);
        if &bytes[8..72] != key.as_bytes() {
            return Err(bad("incompatible cache (key mismatch)"));
        }
        let read_u64 =
            |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap()) as usize;
        let (nz, nx, j) = (read_u64(72), read_u64(80), read_u64(88));
        let len = nz * nx * j;
        if (nz, nx, j) != (grid.nz, grid.nx, geometry.element_count())
            || bytes.len() != 96 + len * 12
        {
            return Err(bad("size mismatch"));
        }
        let body = &bytes[96..];
        let lower = body[..len * 4]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let upper_weight = body[len * 4..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            grid: *grid,
            geometry: geometry.clone(),
            acquisition: *acquisition,
            lower,
            upper_weight,
        })
    }

    /// Returns the cached LUT from `dir` or builds and stores it. The flag
    /// reports a cache hit.
    pub fn load_or_build(
        dir: &Path,
        grid: &GridSpec,
        geometry: &ArrayGeometry,
        acquisition: &AcquisitionParams,
    ) -> Result<(Self, bool)> {
        let key = Self::cache_key(grid, geometry, acquisition);
        let path: PathBuf = dir.join(Self::cache_file_name(&key));
        if path.exists() {
            return Ok((Self::load(&path, grid, geometry, acquisition)?, true));
        }
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let lut = Self::build(grid, geometry, acquisition)?;
        lut.save(&path)?;
        Ok((lut, false))
    }
}

pub fn build_lut(
    grid: &GridSpec,
    geometry: &ArrayGeometry,
    acquisition: &AcquisitionParams,
) -> Result<DelayLut> {
    DelayLut::build(grid, geometry, acquisition)
}

pub fn apply_lut(lut: &DelayLut, frame: &RawFrame) -> Result<DelayTensor> {
    lut.apply(frame)
}
