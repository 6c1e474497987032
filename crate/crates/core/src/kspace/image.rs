use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// 2D complex image, row-major. Rows are the phase-encode axis.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexImage {
    height: usize,
    width: usize,
    data: Vec<Complex64>,
}

impl ComplexImage {
    pub fn new(height: usize, width: usize, data: Vec<Complex64>) -> Result<Self> {
        validate_dims(height, width)?;
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "{}x{} image needs {} samples, got {}",
                height,
                width,
                height * width,
                data.len()
            )));
        }
        Ok(ComplexImage {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![Complex64::new(0.0, 0.0); height * width])
    }

    pub fn from_real(height: usize, width: usize, real: &[f64]) -> Result<Self> {
        Self::new(height, width, real.iter().map(|&r| Complex64::new(r, 0.0)).collect())
    }

    /// Builds an image from separate real and imaginary planes.
    pub fn from_parts(height: usize, width: usize, re: &[f64], im: &[f64]) -> Result<Self> {
        if re.len() != im.len() {
            return Err(Error::Shape("real and imaginary planes differ in length".into()));
        }
        Self::new(
            height,
            width,
            re.iter().zip(im).map(|(&r, &i)| Complex64::new(r, i)).collect(),
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[Complex64] {
        &self.data[r * self.width..(r + 1) * self.width]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [Complex64] {
        &mut self.data[r * self.width..(r + 1) * self.width]
    }

    pub fn at(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.width + c]
    }

    pub fn magnitude(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm()).collect()
    }

    pub fn real_part(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.re).collect()
    }

    pub fn imag_part(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.im).collect()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// `<self, other> = sum conj(self) * other`.
    pub fn inner(&self, other: &ComplexImage) -> Complex64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn max_abs_diff(&self, other: &ComplexImage) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn scale(&self, s: f64) -> ComplexImage {
        self.map(|c| c * s)
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> ComplexImage {
        ComplexImage {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&c| f(c)).collect(),
        }
    }

    pub fn zip_map(
        &self,
        other: &ComplexImage,
        f: impl Fn(Complex64, Complex64) -> Complex64,
    ) -> Result<ComplexImage> {
        self.ensure_same_shape(other)?;
        Ok(ComplexImage {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn ensure_same_shape(&self, other: &ComplexImage) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "{:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }
}

impl Add for &ComplexImage {
    type Output = ComplexImage;
    fn add(self, rhs: &ComplexImage) -> ComplexImage {
        self.zip_map(rhs, |a, b| a + b).expect("image shapes must agree")
    }
}

impl Sub for &ComplexImage {
    type Output = ComplexImage;
    fn sub(self, rhs: &ComplexImage) -> ComplexImage {
        self.zip_map(rhs, |a, b| a - b).expect("image shapes must agree")
    }
}

impl Mul<f64> for &ComplexImage {
    type Output = ComplexImage;
    fn mul(self, rhs: f64) -> ComplexImage {
        self.scale(rhs)
    }
}

fn validate_dims(height: usize, width: usize) -> Result<()> {
    if height < 4 || width < 4 || !height.is_multiple_of(2) || !width.is_multiple_of(2) {
        return Err(Error::Shape(format!(
            "image dimensions must be even and >= 4, got {height}x{width}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_odd_or_tiny_dims() {
        assert!(ComplexImage::zeros(3, 4).is_err());
        assert!(ComplexImage::zeros(2, 2).is_err());
        assert!(ComplexImage::zeros(6, 5).is_err());
        assert!(ComplexImage::zeros(4, 6).is_ok());
    }

    #[test]
    fn rejects_wrong_length() {
        assert!(ComplexImage::new(4, 4, vec![Complex64::default(); 15]).is_err());
    }
}
