//! Coded aperture snapshot spectral imaging: forward simulation, unfolded
//! half-quadratic-splitting reconstruction with a continuous spectral field
//! prior, and rendering at arbitrary wavelengths.

pub mod autodiff;
pub mod cassi;
pub mod error;
pub mod experiment;
pub mod field;
pub mod datasets;
pub mod head;
pub mod metrics;
pub mod model;
pub mod params;
pub mod pipeline;
pub mod prior;
pub mod tensor;
pub mod unfold;

pub use cassi::{CodedMask, DispersionModel, Measurement, SensingOperator, SpectralCube};
pub use error::{Error, Result};
pub use tensor::Tensor;
