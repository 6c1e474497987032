//! Prediction-prior MRI reconstruction.
//!
//! A target-contrast image is first predicted from other contrasts and scan
//! metadata by a conditional rectified-flow network. The prediction is then
//! rigidly registered to the acquisition and used as a prior for a second
//! rectified-flow network whose sampler enforces hard data consistency with
//! the undersampled k-space at every step.

pub mod baselines;
pub mod container;
pub mod error;
pub mod flow;
pub mod harness;
pub mod kspace;
pub mod maskdesign;
pub mod metrics;
pub mod netcore;
pub mod phantom;
pub mod register;

pub use error::{Error, Result};
pub use kspace::{CartesianMask, CoilMaps, ComplexImage, KSpaceData, RealImage};
