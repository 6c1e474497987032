use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::kspace::{CoilMaps, ComplexImage};

/// Upper bound on `max |s(p + e) - s(p)|` over unit pixel steps, times size.
pub const COIL_GRADIENT_BOUND: f64 = 6.0;

const COIL_RADIUS: f64 = 1.1;
const COIL_WIDTH: f64 = 0.9;

/// Gaussian-profile receive coils on a circle around the field of view,
/// each with a slowly varying phase. Maps are normalized pixelwise so that
/// `sum_c |s_c|^2 = 1` everywhere, and referenced to the first coil's phase
/// (a single coil becomes exactly one).
pub fn simulate_coil_maps(n_coils: usize, size: usize) -> Result<CoilMaps> {
    if n_coils == 0 {
        return Err(Error::InvalidArgument("need at least one coil".into()));
    }
    let half = (size as f64 - 1.0) / 2.0;
    let scale = 2.0 / size as f64;
    let mut raw = vec![vec![Complex64::new(0.0, 0.0); size * size]; n_coils];
    for (c, map) in raw.iter_mut().enumerate() {
        let ang = std::f64::consts::TAU * c as f64 / n_coils as f64;
        let (px, py) = (COIL_RADIUS * ang.cos(), COIL_RADIUS * ang.sin());
        for (i, v) in map.iter_mut().enumerate() {
            let x = (i % size) as f64 - half;
            let y = (i / size) as f64 - half;
            let (x, y) = (x * scale, y * scale);
            let d2 = (x - px).powi(2) + (y - py).powi(2);
            let mag = (-d2 / (2.0 * COIL_WIDTH * COIL_WIDTH)).exp();
            let phase = ang + 0.6 * (x * ang.sin() - y * ang.cos());
            *v = Complex64::from_polar(mag, phase);
        }
    }
    let mut maps: Vec<Vec<Complex64>> = raw.clone();
    for i in 0..size * size {
        let norm = raw.iter().map(|m| m[i].norm_sqr()).sum::<f64>().sqrt();
        let reference = raw[0][i] / raw[0][i].norm();
        for (m, r) in maps.iter_mut().zip(&raw) {
            m[i] = r[i] * reference.conj() / norm;
        }
    }
    CoilMaps::new(
        maps.into_iter()
            .map(|m| ComplexImage::new(size, size, m))
            .collect::<Result<_>>()?,
    )
}
