//! Photoacoustic linear-array toolkit: forward simulation, delay
//! preprocessing, classical and model-based reconstruction, synthetic
//! vascular datasets and image-quality metrics.

pub mod beamform;
pub mod dataset;
pub mod delay;
pub mod error;
pub mod forward;
pub mod inverse;
pub mod metrics;
pub mod model;
pub mod phantom;
pub mod preview;
pub mod signal;

pub use error::{Error, Result};
pub use model::{
    AcquisitionParams, ArrayGeometry, DatasetRecord, DelayTensor, GridSpec, ImageGrid, RawFrame,
};
