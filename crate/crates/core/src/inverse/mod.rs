//! Model-based reconstructions: ISTA with TV and wavelet sparsity, and the
//! k-space mapping of a linear array.

pub mod ista;
pub mod kspace;
pub mod tv;
pub mod wavelet;

pub use ista::{
    ista, ista_reconstruct, soft_threshold, CsConfig, IstaOutput, IterationRecord, LinearOperator,
    StepSize,
};
pub use kspace::{
    frame_spectrum, kspace_forward_map, kspace_reconstruct, kspace_unmap, KSpectrum, KspaceConfig,
};
pub use wavelet::{Wavelet, Wavelet2d};
