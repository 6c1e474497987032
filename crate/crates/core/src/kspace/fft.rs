use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::ComplexImage;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    })
}

/// Centered 1D transform in place: ifftshift, fft, fftshift. Unnormalized.
fn centered_1d(buf: &mut [Complex64], fft: &dyn Fft<f64>, scratch: &mut [Complex64]) {
    let half = buf.len() / 2;
    buf.rotate_left(half);
    fft.process_with_scratch(buf, scratch);
    buf.rotate_left(half);
}

fn transform(img: &ComplexImage, inverse: bool) -> ComplexImage {
    let (h, w) = img.shape();
    let mut out = img.clone();
    let row_fft = plan(w, inverse);
    let col_fft = plan(h, inverse);
    let mut scratch = vec![
        Complex64::default();
        row_fft
            .get_inplace_scratch_len()
            .max(col_fft.get_inplace_scratch_len())
    ];
    for r in 0..h {
        centered_1d(out.row_mut(r), row_fft.as_ref(), &mut scratch);
    }
    let mut col = vec![Complex64::default(); h];
    let data = out.data_mut();
    for c in 0..w {
        for r in 0..h {
            col[r] = data[r * w + c];
        }
        centered_1d(&mut col, col_fft.as_ref(), &mut scratch);
        for r in 0..h {
            data[r * w + c] = col[r];
        }
    }
    let norm = 1.0 / ((h * w) as f64).sqrt();
    data.iter_mut().for_each(|v| *v *= norm);
    out
}

/// Centered, orthonormal 2D DFT. Zero frequency lands at `(H/2, W/2)`.
pub fn fft2c(img: &ComplexImage) -> ComplexImage {
    transform(img, false)
}

/// Inverse of [`fft2c`].
pub fn ifft2c(kspace: &ComplexImage) -> ComplexImage {
    transform(kspace, true)
}
