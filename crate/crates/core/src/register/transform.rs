use serde::{Deserialize, Serialize};

use crate::kspace::RealImage;

/// In-plane rigid motion about the image center: rotate by `theta_deg`,
/// then translate by `(dx_px, dy_px)`. `x` runs along columns, `y` along rows.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform2D {
    pub theta_deg: f64,
    pub dx_px: f64,
    pub dy_px: f64,
}

impl RigidTransform2D {
    pub const IDENTITY: RigidTransform2D = RigidTransform2D {
        theta_deg: 0.0,
        dx_px: 0.0,
        dy_px: 0.0,
    };

    pub fn new(theta_deg: f64, dx_px: f64, dy_px: f64) -> Self {
        RigidTransform2D { theta_deg, dx_px, dy_px }
    }

    pub fn is_identity(&self) -> bool {
        self.theta_deg == 0.0 && self.dx_px == 0.0 && self.dy_px == 0.0
    }

    pub fn is_finite(&self) -> bool {
        self.theta_deg.is_finite() && self.dx_px.is_finite() && self.dy_px.is_finite()
    }

    /// Maps centered coordinates `(x, y)` forward.
    pub fn map(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.theta_deg.to_radians().sin_cos();
        (c * x - s * y + self.dx_px, s * x + c * y + self.dy_px)
    }

    pub fn inverse(&self) -> RigidTransform2D {
        let (s, c) = self.theta_deg.to_radians().sin_cos();
        // R^-1 = R^T applied to -d.
        let (dx, dy) = (-self.dx_px, -self.dy_px);
        RigidTransform2D {
            theta_deg: -self.theta_deg,
            dx_px: c * dx + s * dy,
            dy_px: -s * dx + c * dy,
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform2D) -> RigidTransform2D {
        let (x, y) = self.map(other.dx_px, other.dy_px);
        RigidTransform2D {
            theta_deg: self.theta_deg + other.theta_deg,
            dx_px: x,
            dy_px: y,
        }
    }

    /// Parameter-wise distance `(|dtheta|, max(|ddx|, |ddy|))`.
    pub fn distance(&self, other: &RigidTransform2D) -> (f64, f64) {
        (
            (self.theta_deg - other.theta_deg).abs(),
            (self.dx_px - other.dx_px).abs().max((self.dy_px - other.dy_px).abs()),
        )
    }
}

fn center(n: usize) -> f64 {
    (n as f64 - 1.0) / 2.0
}

/// Catmull-Rom weights for the four taps around fractional offset `f`.
fn cubic_weights(f: f64) -> [f64; 4] {
    let (f2, f3) = (f * f, f * f * f);
    [
        0.5 * (-f3 + 2.0 * f2 - f),
        0.5 * (3.0 * f3 - 5.0 * f2 + 2.0),
        0.5 * (-3.0 * f3 + 4.0 * f2 + f),
        0.5 * (f3 - f2),
    ]
}

/// Catmull-Rom sample at fractional pixel `(row, col)`; taps outside the grid
/// contribute zero. Interpolating, so integer positions return the pixel.
pub fn sample_cubic(img: &RealImage, row: f64, col: f64) -> f64 {
    let (h, w) = (img.height() as isize, img.width() as isize);
    let (r0, c0) = (row.floor(), col.floor());
    let (wr, wc) = (cubic_weights(row - r0), cubic_weights(col - c0));
    let (r0, c0) = (r0 as isize, c0 as isize);
    if r0 < -2 || c0 < -2 || r0 > h || c0 > w {
        return 0.0;
    }
    let data = img.data();
    let mut acc = 0.0;
    for (i, a) in wr.iter().enumerate() {
        let r = r0 - 1 + i as isize;
        if r < 0 || r >= h {
            continue;
        }
        for (j, b) in wc.iter().enumerate() {
            let c = c0 - 1 + j as isize;
            if c >= 0 && c < w {
                acc += a * b * data[(r * w + c) as usize];
            }
        }
    }
    acc
}

/// Resamples `img` so that content at `p` moves to `T(p)`; zero outside the
/// field of view. The identity returns the input unchanged.
pub fn apply_rigid(img: &RealImage, t: &RigidTransform2D) -> RealImage {
    if t.is_identity() {
        return img.clone();
    }
    let inv = t.inverse();
    let (h, w) = img.shape();
    let (cy, cx) = (center(h), center(w));
    let mut out = vec![0.0; h * w];
    for (r, row) in out.chunks_mut(w).enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            let (x, y) = inv.map(c as f64 - cx, r as f64 - cy);
            *v = sample_cubic(img, y + cy, x + cx);
        }
    }
    RealImage::new(h, w, out).expect("shape preserved")
}

/// Integer translation with zero fill.
pub(crate) fn shift_integer(img: &RealImage, dx: isize, dy: isize) -> RealImage {
    let (h, w) = img.shape();
    let mut out = vec![0.0; h * w];
    let src = img.data();
    for r in 0..h as isize {
        let sr = r - dy;
        if sr < 0 || sr >= h as isize {
            continue;
        }
        for c in 0..w as isize {
            let sc = c - dx;
            if sc >= 0 && sc < w as isize {
                out[(r * w as isize + c) as usize] = src[(sr * w as isize + sc) as usize];
            }
        }
    }
    RealImage::new(h, w, out).expect("shape preserved")
}
