use std::f64::consts::FRAC_1_SQRT_2;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::kspace::ComplexImage;

/// Orthonormal multi-level 2D Haar transform in the Mallat layout: after
/// `levels` levels the approximation occupies the top-left
/// `(h >> levels) x (w >> levels)` block and everything else is detail.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Haar {
    pub levels: usize,
}

impl Haar {
    pub fn new(levels: usize) -> Self {
        Haar { levels }
    }

    pub fn check(&self, (h, w): (usize, usize)) -> Result<()> {
        let m = 1usize << self.levels;
        if h % m != 0 || w % m != 0 || h < m || w < m {
            return Err(Error::Shape(format!("{h}x{w} image does not support {} Haar levels", self.levels)));
        }
        Ok(())
    }

    pub fn forward(&self, img: &ComplexImage) -> Result<ComplexImage> {
        self.check(img.shape())?;
        let (h, w) = img.shape();
        let mut d = img.data().to_vec();
        let mut buf = vec![Complex64::default(); h.max(w)];
        for l in 0..self.levels {
            let (bh, bw) = (h >> l, w >> l);
            for r in 0..bh {
                split(&mut d[r * w..r * w + bw], &mut buf);
            }
            for c in 0..bw {
                split_strided(&mut d, c, w, bh, &mut buf);
            }
        }
        ComplexImage::new(h, w, d)
    }

    pub fn inverse(&self, coef: &ComplexImage) -> Result<ComplexImage> {
        self.check(coef.shape())?;
        let (h, w) = coef.shape();
        let mut d = coef.data().to_vec();
        let mut buf = vec![Complex64::default(); h.max(w)];
        for l in (0..self.levels).rev() {
            let (bh, bw) = (h >> l, w >> l);
            for c in 0..bw {
                merge_strided(&mut d, c, w, bh, &mut buf);
            }
            for r in 0..bh {
                merge(&mut d[r * w..r * w + bw], &mut buf);
            }
        }
        ComplexImage::new(h, w, d)
    }

    /// True for coefficients outside the coarsest approximation block.
    pub fn detail_mask(&self, (h, w): (usize, usize)) -> Vec<bool> {
        let (ah, aw) = (h >> self.levels, w >> self.levels);
        (0..h * w).map(|i| i / w >= ah || i % w >= aw).collect()
    }
}

fn split(x: &mut [Complex64], buf: &mut [Complex64]) {
    let half = x.len() / 2;
    for i in 0..half {
        let (a, b) = (x[2 * i], x[2 * i + 1]);
        buf[i] = (a + b) * FRAC_1_SQRT_2;
        buf[half + i] = (a - b) * FRAC_1_SQRT_2;
    }
    x.copy_from_slice(&buf[..x.len()]);
}

fn merge(x: &mut [Complex64], buf: &mut [Complex64]) {
    let half = x.len() / 2;
    for i in 0..half {
        let (s, d) = (x[i], x[half + i]);
        buf[2 * i] = (s + d) * FRAC_1_SQRT_2;
        buf[2 * i + 1] = (s - d) * FRAC_1_SQRT_2;
    }
    x.copy_from_slice(&buf[..x.len()]);
}

fn split_strided(d: &mut [Complex64], col: usize, stride: usize, n: usize, buf: &mut [Complex64]) {
    let mut v: Vec<Complex64> = (0..n).map(|r| d[r * stride + col]).collect();
    split(&mut v, buf);
    for (r, z) in v.into_iter().enumerate() {
        d[r * stride + col] = z;
    }
}

fn merge_strided(d: &mut [Complex64], col: usize, stride: usize, n: usize, buf: &mut [Complex64]) {
    let mut v: Vec<Complex64> = (0..n).map(|r| d[r * stride + col]).collect();
    merge(&mut v, buf);
    for (r, z) in v.into_iter().enumerate() {
        d[r * stride + col] = z;
    }
}
