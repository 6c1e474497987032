//! Centered Fourier transforms and the Cartesian undersampling operator.
//!
//! `A = M F` where `F` is the centered orthonormal 2D DFT and `M` keeps the
//! selected phase-encode rows. With this convention `A^T = F^H M^T` and
//! `A^T A` is an orthogonal projection.

mod coils;
mod fft;
mod image;
mod mask;
mod ops;
mod real;

pub use coils::{simulate_and_combine, simulate_coils, CoilMaps};
pub use fft::{fft2c, ifft2c};
#[cfg(test)]
pub(crate) use fft::oracle;
pub use image::ComplexImage;
pub use mask::CartesianMask;
pub use ops::{adjoint, apply_forward, data_consistency, normal_op, KSpaceData};
pub use real::RealImage;
