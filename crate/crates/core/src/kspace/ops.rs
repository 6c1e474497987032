use num_complex::Complex64;

use super::{fft2c, ifft2c, CartesianMask, ComplexImage};
use crate::error::{Error, Result};

/// Undersampled k-space: full grid with unselected lines held at exact zero.
#[derive(Clone, Debug, PartialEq)]
pub struct KSpaceData {
    kspace: ComplexImage,
    mask: CartesianMask,
}

impl KSpaceData {
    /// Wraps measured k-space, zeroing every line the mask does not select.
    pub fn new(mut kspace: ComplexImage, mask: CartesianMask) -> Result<Self> {
        check_mask(&kspace, &mask)?;
        for r in 0..kspace.height() {
            if !mask.is_selected(r) {
                kspace.row_mut(r).fill(Complex64::default());
            }
        }
        Ok(KSpaceData { kspace, mask })
    }

    pub fn kspace(&self) -> &ComplexImage {
        &self.kspace
    }

    pub fn mask(&self) -> &CartesianMask {
        &self.mask
    }

    pub fn shape(&self) -> (usize, usize) {
        self.kspace.shape()
    }

    /// Relative deviation of `img`'s k-space from the measurement on sampled lines.
    pub fn consistency_error(&self, img: &ComplexImage) -> f64 {
        let k = fft2c(img);
        let (mut num, mut den) = (0.0, 0.0);
        for r in self.mask.lines() {
            for (a, b) in k.row(r).iter().zip(self.kspace.row(r)) {
                num += (a - b).norm_sqr();
                den += b.norm_sqr();
            }
        }
        if den == 0.0 {
            num.sqrt()
        } else {
            (num / den).sqrt()
        }
    }

    pub fn is_finite(&self) -> bool {
        self.kspace.is_finite()
    }
}

impl std::ops::Add for &KSpaceData {
    type Output = KSpaceData;
    fn add(self, rhs: &KSpaceData) -> KSpaceData {
        assert_eq!(self.mask, rhs.mask, "measurements must share a mask");
        KSpaceData {
            kspace: &self.kspace + &rhs.kspace,
            mask: self.mask.clone(),
        }
    }
}

fn check_mask(img: &ComplexImage, mask: &CartesianMask) -> Result<()> {
    if mask.line_count() != img.height() {
        return Err(Error::Shape(format!(
            "mask has {} lines but image has {} phase-encode rows",
            mask.line_count(),
            img.height()
        )));
    }
    Ok(())
}

/// `y = M F x`.
pub fn apply_forward(img: &ComplexImage, mask: &CartesianMask) -> Result<KSpaceData> {
    check_mask(img, mask)?;
    KSpaceData::new(fft2c(img), mask.clone())
}

/// `A^T y`, the zero-filled reconstruction.
pub fn adjoint(y: &KSpaceData) -> ComplexImage {
    ifft2c(&y.kspace)
}

/// `A^T A x`: keeps only the content of `x` visible through the mask.
pub fn normal_op(img: &ComplexImage, mask: &CartesianMask) -> Result<ComplexImage> {
    Ok(adjoint(&apply_forward(img, mask)?))
}

/// `A^T y + (I - A^T A) x_hat`: overwrites sampled lines with the measurement.
pub fn data_consistency(x_hat: &ComplexImage, y: &KSpaceData) -> Result<ComplexImage> {
    x_hat.ensure_same_shape(&y.kspace)?;
    let mut k = fft2c(x_hat);
    for r in y.mask.lines() {
        k.row_mut(r).copy_from_slice(y.kspace.row(r));
    }
    Ok(ifft2c(&k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kspace::fft::oracle::brute_force_dft;
    use crate::kspace::testutil::{random_image, random_kspace};

    fn mask_04() -> CartesianMask {
        CartesianMask::from_lines(8, &[0, 4], 4).unwrap()
    }

    #[test]
    fn full_mask_is_plain_transform() {
        let x = random_image(8, 8, 1);
        let y = apply_forward(&x, &CartesianMask::full(8)).unwrap();
        assert!(y.kspace().max_abs_diff(&fft2c(&x)) < 1e-15);
        assert!(adjoint(&y).max_abs_diff(&x) < 1e-10);
    }

    #[test]
    fn empty_mask_measures_nothing() {
        let x = random_image(8, 8, 2);
        let empty = CartesianMask::from_lines(8, &[], 9).unwrap();
        let y = apply_forward(&x, &empty).unwrap();
        assert_eq!(y.kspace().norm(), 0.0);
        assert_eq!(adjoint(&y).norm(), 0.0);
    }

    #[test]
    fn selected_rows_match_zeroed_brute_force() {
        let x = random_image(8, 8, 3);
        let y = apply_forward(&x, &mask_04()).unwrap();
        let mut expected = brute_force_dft(&x);
        for r in 0..8 {
            if r != 0 && r != 4 {
                expected.row_mut(r).fill(Complex64::default());
            }
        }
        assert!(y.kspace().max_abs_diff(&expected) < 1e-10);
        for r in [1, 2, 3, 5, 6, 7] {
            assert!(y.kspace().row(r).iter().all(|v| *v == Complex64::default()));
        }
    }

    #[test]
    fn mask_shape_mismatch_is_an_error() {
        let x = random_image(8, 8, 4);
        let m = CartesianMask::from_lines(16, &[0, 8], 8).unwrap();
        assert!(apply_forward(&x, &m).is_err());
    }

    #[test]
    fn adjoint_identity() {
        for seed in 0..5 {
            let x = random_image(8, 8, seed);
            let y = random_kspace(&mask_04(), 8, 100 + seed);
            let lhs = apply_forward(&x, &mask_04()).unwrap().kspace().inner(y.kspace());
            let rhs = x.inner(&adjoint(&y));
            assert!((lhs - rhs).norm() < 1e-10 * (1.0 + lhs.norm()));
        }
    }

    #[test]
    fn consistency_projection_properties() {
        let mask = mask_04();
        let x_hat = random_image(8, 8, 5);
        let y = random_kspace(&mask, 8, 6);
        let once = data_consistency(&x_hat, &y).unwrap();
        let twice = data_consistency(&once, &y).unwrap();
        assert!(twice.max_abs_diff(&once) < 1e-10);
        assert!(y.consistency_error(&once) < 1e-10);
        let k_out = fft2c(&once);
        let k_in = fft2c(&x_hat);
        for r in [1, 2, 3, 5, 6, 7] {
            for (a, b) in k_out.row(r).iter().zip(k_in.row(r)) {
                assert!((a - b).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn consistent_input_is_fixed_point() {
        let x = random_image(8, 8, 7);
        let y = apply_forward(&x, &mask_04()).unwrap();
        assert!(data_consistency(&x, &y).unwrap().max_abs_diff(&x) < 1e-10);
        let zero = ComplexImage::zeros(8, 8).unwrap();
        assert!(data_consistency(&zero, &y).unwrap().max_abs_diff(&adjoint(&y)) < 1e-12);
    }

    #[test]
    fn normal_operator_is_a_projection() {
        let mask = mask_04();
        let a = random_image(8, 8, 8);
        let b = random_image(8, 8, 9);
        let pa = normal_op(&a, &mask).unwrap();
        let ppa = normal_op(&pa, &mask).unwrap();
        assert!(ppa.max_abs_diff(&pa) < 1e-10);
        let lhs = pa.inner(&b);
        let rhs = a.inner(&normal_op(&b, &mask).unwrap());
        assert!((lhs - rhs).norm() < 1e-10);
    }

    #[test]
    fn zero_filled_is_linear() {
        let mask = mask_04();
        let y1 = random_kspace(&mask, 8, 10);
        let y2 = random_kspace(&mask, 8, 11);
        let sum = adjoint(&(&y1 + &y2));
        let parts = &adjoint(&y1) + &adjoint(&y2);
        assert!(sum.max_abs_diff(&parts) < 1e-10);
    }
}
