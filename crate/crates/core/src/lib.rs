//! Learned non-uniform downsampling for semantic segmentation.
//!
//! A deformation network predicts an importance map over a low-resolution
//! copy of the image; an attraction mapping turns that map into a sampling
//! grid that is denser where importance is high. The grid drives a
//! differentiable resampler so the sampler and a segmentation head train
//! jointly. Predictions are brought back to full resolution by scattering
//! them to their source positions and filling with exact nearest neighbors.

pub mod autodiff;
pub mod error;
pub mod metrics;
pub mod models;
pub mod recovery;
pub mod samplers;
pub mod synthdata;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{DeformationMap, LabelMap, SamplingGrid, Tensor};
