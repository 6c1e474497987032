//! Rigid alignment of a predicted prior to the acquisition frame.
//!
//! In-plane motion is found by maximizing normalized cross-correlation over
//! a rotation/translation box: an exhaustive 1 degree / 1 pixel grid, then
//! a joint Nelder-Mead refinement of the best few angles. Through-plane offset is an
//! integer slice search by the same score.

mod transform;

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kspace::{adjoint, normal_op, CartesianMask, ComplexImage, KSpaceData, RealImage};
use crate::netcore::{ChannelStack, VectorFieldNet};

pub use transform::{apply_rigid, sample_cubic, RigidTransform2D};
use transform::shift_integer;

/// Largest z offset examined by [`z_align`].
pub const Z_SEARCH: i32 = 5;

/// Parameter box and grid for [`estimate_rigid_in`].
#[derive(Clone, Debug)]
pub struct SearchBox {
    pub max_theta_deg: f64,
    /// Translation bound as a fraction of each image dimension.
    pub max_shift_frac: f64,
    pub theta_step_deg: f64,
    /// Grid angles carried into local refinement.
    pub refine_candidates: usize,
    /// Features both images are reduced to before scoring.
    pub features: Features,
    /// Nelder-Mead iteration cap per candidate.
    pub refine_iters: u64,
}

impl Default for SearchBox {
    /// Rotations within ±10°. Forward transforms have translations within
    /// ±10% of the image size; their inverses rotate that offset, so the
    /// translation bound is widened by cos 10° + sin 10° to keep them inside.
    fn default() -> Self {
        let t = 10f64.to_radians();
        SearchBox {
            max_theta_deg: 10.0,
            max_shift_frac: 0.1 * (t.cos() + t.sin()),
            theta_step_deg: 1.0,
            refine_candidates: 4,
            features: Features::Smoothed(1.5),
            refine_iters: 300,
        }
    }
}

/// Normalized cross-correlation; `None` when either image is constant.
pub fn ncc(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (u, v) = (x - ma, y - mb);
        sab += u * v;
        saa += u * u;
        sbb += v * v;
    }
    let denom = (saa * sbb).sqrt();
    if denom <= 1e-12 * n || !denom.is_finite() {
        None
    } else {
        Some(sab / denom)
    }
}

/// Feature image the similarity is computed on. Both variants commute with
/// rigid motion up to resampling error, so they are applied once up front.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Features {
    Intensity,
    /// Gaussian smoothing with the given sigma (pixels).
    Smoothed(f64),
    /// Magnitude of the Gaussian-smoothed gradient.
    GradientMagnitude(f64),
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable convolution with zero padding; `kr` along rows, `kc` along columns.
fn separable(img: &RealImage, kr: &[f64], kc: &[f64]) -> RealImage {
    let (h, w) = img.shape();
    let (rr, rc) = ((kr.len() / 2) as isize, (kc.len() / 2) as isize);
    let src = img.data();
    let mut tmp = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (j, k) in kc.iter().enumerate() {
                let cc = c as isize + j as isize - rc;
                if cc >= 0 && cc < w as isize {
                    acc += k * src[r * w + cc as usize];
                }
            }
            tmp[r * w + c] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (j, k) in kr.iter().enumerate() {
                let rr2 = r as isize + j as isize - rr;
                if rr2 >= 0 && rr2 < h as isize {
                    acc += k * tmp[rr2 as usize * w + c];
                }
            }
            out[r * w + c] = acc;
        }
    }
    RealImage::new(h, w, out).expect("shape preserved")
}

impl Features {
    pub fn apply(&self, img: &RealImage) -> RealImage {
        match *self {
            Features::Intensity => img.clone(),
            Features::Smoothed(sigma) => {
                let k = gaussian_kernel(sigma);
                separable(img, &k, &k)
            }
            Features::GradientMagnitude(sigma) => {
                let g = gaussian_kernel(sigma);
                let r = (g.len() / 2) as isize;
                let d: Vec<f64> = (-r..=r)
                    .zip(&g)
                    .map(|(i, v)| -(i as f64) / (sigma * sigma) * v)
                    .collect();
                let gx = separable(img, &g, &d);
                let gy = separable(img, &d, &g);
                let data = gx.data().iter().zip(gy.data()).map(|(a, b)| a.hypot(*b)).collect();
                RealImage::new(img.height(), img.width(), data).expect("shape preserved")
            }
        }
    }
}

fn is_constant(img: &RealImage) -> bool {
    let d = img.data();
    d.iter().all(|&v| v == d[0])
}

struct Scorer<'a> {
    moving: &'a RealImage,
    fixed: &'a RealImage,
    projection: Option<&'a CartesianMask>,
}

impl Scorer<'_> {
    fn score_image(&self, candidate: &RealImage) -> f64 {
        let projected;
        let c = match self.projection {
            Some(mask) => {
                let img = candidate.to_complex().expect("even grid");
                projected = normal_op(&img, mask).expect("mask matches").magnitude_image();
                &projected
            }
            None => candidate,
        };
        ncc(c.data(), self.fixed.data()).unwrap_or(f64::NEG_INFINITY)
    }

    fn score(&self, t: &RigidTransform2D) -> f64 {
        self.score_image(&apply_rigid(self.moving, t))
    }
}

/// Finds `T` maximizing NCC between `apply_rigid(moving, T)` and `fixed`.
pub fn estimate_rigid(moving: &RealImage, fixed: &RealImage) -> Result<RigidTransform2D> {
    Ok(estimate_rigid_in(moving, fixed, &SearchBox::default(), None)?.0)
}

/// As [`estimate_rigid`] with an explicit search box. With `projection`, the
/// moving candidate is passed through `A^T A` of that mask and compared in
/// magnitude, so `fixed` may be an aliased zero-filled image. Returns the
/// transform and its score.
pub fn estimate_rigid_in(
    moving: &RealImage,
    fixed: &RealImage,
    sbox: &SearchBox,
    projection: Option<&CartesianMask>,
) -> Result<(RigidTransform2D, f64)> {
    moving.ensure_same_shape(fixed)?;
    if is_constant(moving) || is_constant(fixed) {
        return Err(Error::Degenerate("cannot register a constant image".into()));
    }
    if let Some(m) = projection {
        if m.line_count() != fixed.height() {
            return Err(Error::Shape("projection mask does not match image rows".into()));
        }
    }
    // Smoothing equalizes the resampling blur between candidates; without it
    // the optimum drifts by up to a degree on smooth anatomy.
    let (moving, fixed) = (&sbox.features.apply(moving), &sbox.features.apply(fixed));
    let scorer = Scorer {
        moving,
        fixed,
        projection,
    };
    let (h, w) = moving.shape();
    let max_dx = sbox.max_shift_frac * w as f64;
    let max_dy = sbox.max_shift_frac * h as f64;
    let (gx, gy) = (max_dx.floor() as isize, max_dy.floor() as isize);
    let n_theta = (sbox.max_theta_deg / sbox.theta_step_deg).floor() as isize;

    // Rotation first, then integer shifts of the rotated image; this equals
    // apply_rigid with the combined parameters exactly. Each angle keeps its
    // best shift together with a parabolic estimate of its sub-pixel peak,
    // since a half-pixel shift error costs more NCC than several degrees.
    let mut per_angle: Vec<(f64, f64, RigidTransform2D)> = (-n_theta..=n_theta)
        .into_par_iter()
        .map(|k| {
            let theta = k as f64 * sbox.theta_step_deg;
            let rotated = apply_rigid(moving, &RigidTransform2D::new(theta, 0.0, 0.0));
            let (nx, ny) = (2 * gx + 1, 2 * gy + 1);
            let mut grid = vec![f64::NEG_INFINITY; (nx * ny) as usize];
            for dy in -gy..=gy {
                for dx in -gx..=gx {
                    grid[((dy + gy) * nx + dx + gx) as usize] = scorer.score_image(&shift_integer(&rotated, dx, dy));
                }
            }
            let (imax, &best) = grid
                .iter()
                .enumerate()
                .fold((0, &f64::NEG_INFINITY), |a, b| if *b.1 > *a.1 { b } else { a });
            let (ix, iy) = (imax as isize % nx, imax as isize / nx);
            let at = |x: isize, y: isize| {
                if x < 0 || y < 0 || x >= nx || y >= ny {
                    None
                } else {
                    Some(grid[(y * nx + x) as usize]).filter(|v| v.is_finite())
                }
            };
            let mut peak = best;
            for (m, p) in [(at(ix - 1, iy), at(ix + 1, iy)), (at(ix, iy - 1), at(ix, iy + 1))] {
                if let (Some(m), Some(p)) = (m, p) {
                    let curv = m - 2.0 * best + p;
                    if curv < 0.0 {
                        let delta = 0.5 * (m - p) / curv;
                        peak -= 0.25 * (m - p) * delta;
                    }
                }
            }
            (peak, best, RigidTransform2D::new(theta, (ix - gx) as f64, (iy - gy) as f64))
        })
        .collect();
    per_angle.sort_by(|a, b| b.0.total_cmp(&a.0));
    if !per_angle[0].1.is_finite() {
        return Err(Error::Degenerate("no overlap anywhere in the search box".into()));
    }

    let bounds = [
        (-sbox.max_theta_deg, sbox.max_theta_deg),
        (-max_dx, max_dx),
        (-max_dy, max_dy),
    ];
    let refined: Vec<(f64, RigidTransform2D)> = per_angle
        .par_iter()
        .take(sbox.refine_candidates.max(1))
        .map(|&(_, s0, t0)| refine(&scorer, t0, s0, &bounds, [0.5 * sbox.theta_step_deg, 0.5, 0.5], sbox.refine_iters))
        .collect();
    let (score, t) = refined
        .into_iter()
        .fold((f64::NEG_INFINITY, RigidTransform2D::IDENTITY), |a, b| if b.0 > a.0 { b } else { a });
    Ok((t, score))
}

struct NegScore<'a, 'b> {
    scorer: &'a Scorer<'b>,
    bounds: [(f64, f64); 3],
}

impl CostFunction for NegScore<'_, '_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        if p.iter().zip(&self.bounds).any(|(v, (lo, hi))| v < lo || v > hi) {
            return Ok(f64::INFINITY);
        }
        let s = self.scorer.score(&RigidTransform2D::new(p[0], p[1], p[2]));
        Ok(if s.is_finite() { -s } else { f64::INFINITY })
    }
}

/// Joint Nelder-Mead ascent from `t`. Rotation about the image centre moves
/// off-centre structure, so theta and the shifts are coupled and must be
/// refined together.
fn refine(
    scorer: &Scorer<'_>,
    t: RigidTransform2D,
    score: f64,
    bounds: &[(f64, f64); 3],
    step: [f64; 3],
    max_iters: u64,
) -> (f64, RigidTransform2D) {
    let x0 = vec![t.theta_deg, t.dx_px, t.dy_px];
    let mut simplex = vec![x0.clone()];
    for (axis, s) in step.iter().enumerate() {
        let mut v = x0.clone();
        let (lo, hi) = bounds[axis];
        v[axis] = if v[axis] + s <= hi { v[axis] + s } else { (v[axis] - s).max(lo) };
        simplex.push(v);
    }
    let solver = NelderMead::new(simplex)
        .with_sd_tolerance(1e-9)
        .expect("tolerance is positive");
    let problem = NegScore { scorer, bounds: *bounds };
    let best = Executor::new(problem, solver)
        .configure(|st| st.max_iters(max_iters))
        .run()
        .ok()
        .and_then(|r| {
            let st = r.state();
            st.get_best_param().cloned().map(|p| (-st.get_best_cost(), p))
        });
    match best {
        Some((s, p)) if s > score => (s, RigidTransform2D::new(p[0], p[1], p[2])),
        _ => (score, t),
    }
}

/// Picks the slice shift in `[-5, 5]` whose prior slice best correlates with
/// `target`. `stack` holds `2k + 1` slices centred on the nominal index, with
/// `k >= 5`. Ties resolve toward the smaller `|shift|`, negative first.
pub fn z_align(stack: &[RealImage], target: &RealImage) -> Result<i32> {
    if stack.len() < 2 * Z_SEARCH as usize + 1 || stack.len().is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "z search needs an odd stack of at least {} slices, got {}",
            2 * Z_SEARCH + 1,
            stack.len()
        )));
    }
    if is_constant(target) {
        return Err(Error::Degenerate("constant z-search target".into()));
    }
    let mid = (stack.len() / 2) as i32;
    let mut best = (f64::NEG_INFINITY, 0);
    for k in 0..=Z_SEARCH {
        for s in if k == 0 { vec![0] } else { vec![-k, k] } {
            let slice = &stack[(mid + s) as usize];
            slice.ensure_same_shape(target)?;
            let score = ncc(slice.data(), target.data()).unwrap_or(f64::NEG_INFINITY);
            if score > best.0 {
                best = (score, s);
            }
        }
    }
    Ok(best.1)
}

/// Fast reconstruction used as the registration target: one pass of the
/// light network on the zero-filled image (residual output), or the
/// zero-filled image itself when no network is given.
pub fn light_recon(y: &KSpaceData, net: Option<&VectorFieldNet>) -> Result<ComplexImage> {
    let zf = adjoint(y);
    let Some(net) = net else {
        return Ok(zf);
    };
    let out = net.forward(&ChannelStack::from_complex(&zf), None, None)?;
    Ok(&zf + &out.to_complex()?)
}
