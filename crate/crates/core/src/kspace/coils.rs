use num_complex::Complex64;

use super::{adjoint, apply_forward, CartesianMask, ComplexImage, KSpaceData};
use crate::error::{Error, Result};

/// Per-receiver complex sensitivities sharing one image grid.
#[derive(Clone, Debug, PartialEq)]
pub struct CoilMaps {
    maps: Vec<ComplexImage>,
}

impl CoilMaps {
    pub fn new(maps: Vec<ComplexImage>) -> Result<Self> {
        let first = maps
            .first()
            .ok_or_else(|| Error::InvalidArgument("at least one coil is required".into()))?;
        for m in &maps[1..] {
            first.ensure_same_shape(m)?;
        }
        Ok(CoilMaps { maps })
    }

    pub fn n_coils(&self) -> usize {
        self.maps.len()
    }

    pub fn maps(&self) -> &[ComplexImage] {
        &self.maps
    }

    pub fn shape(&self) -> (usize, usize) {
        self.maps[0].shape()
    }

    /// Pixelwise `sum_c |s_c|^2`.
    pub fn energy(&self) -> Vec<f64> {
        let mut e = vec![0.0; self.maps[0].len()];
        for m in &self.maps {
            for (acc, v) in e.iter_mut().zip(m.data()) {
                *acc += v.norm_sqr();
            }
        }
        e
    }

    /// Largest deviation of `sum_c |s_c|^2` from one over the given support.
    pub fn normalization_error(&self, support: &[bool]) -> f64 {
        self.energy()
            .iter()
            .zip(support)
            .filter(|(_, &s)| s)
            .map(|(e, _)| (e - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Forward-simulates per-coil undersampled k-space of `img`.
pub fn simulate_coils(img: &ComplexImage, maps: &CoilMaps, mask: &CartesianMask) -> Result<Vec<KSpaceData>> {
    maps.maps
        .iter()
        .map(|s| {
            let weighted = img.zip_map(s, |x, s| x * s)?;
            apply_forward(&weighted, mask)
        })
        .collect()
}

/// Sensitivity-weighted coil combination `sum_c conj(s_c) * A^T y_c`.
pub fn simulate_and_combine(coil_kspaces: &[KSpaceData], maps: &CoilMaps) -> Result<ComplexImage> {
    if coil_kspaces.len() != maps.n_coils() {
        return Err(Error::Shape(format!(
            "{} coil measurements for {} sensitivity maps",
            coil_kspaces.len(),
            maps.n_coils()
        )));
    }
    let mask = coil_kspaces[0].mask();
    if coil_kspaces.iter().any(|y| y.mask() != mask) {
        return Err(Error::InvalidArgument("coil measurements use different masks".into()));
    }
    let (h, w) = maps.shape();
    let mut acc = vec![Complex64::default(); h * w];
    for (y, s) in coil_kspaces.iter().zip(&maps.maps) {
        let zf = adjoint(y);
        zf.ensure_same_shape(s)?;
        for ((a, x), s) in acc.iter_mut().zip(zf.data()).zip(s.data()) {
            *a += s.conj() * x;
        }
    }
    ComplexImage::new(h, w, acc)
}
