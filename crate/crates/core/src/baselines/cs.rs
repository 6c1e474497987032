use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::haar::Haar;
use crate::error::{Error, Result};
use crate::kspace::{adjoint, data_consistency, fft2c, ComplexImage, KSpaceData};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CSConfig {
    pub lambda: f64,
    pub max_iters: usize,
    /// Relative objective change that ends the iteration.
    pub tol: f64,
    pub levels: usize,
}

impl Default for CSConfig {
    fn default() -> Self {
        CSConfig {
            lambda: 0.01,
            max_iters: 200,
            tol: 1e-6,
            levels: 3,
        }
    }
}

impl CSConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("CS lambda must be positive, got {}", self.lambda)));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::InvalidArgument(format!("CS tol must be positive, got {}", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("CS needs at least one iteration".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct CsResult {
    pub image: ComplexImage,
    /// Objective at the start point and after every iteration.
    pub objective: Vec<f64>,
    pub iterations: usize,
    /// False when `max_iters` ran out before the tolerance was met; the
    /// image is then the best iterate seen.
    pub converged: bool,
}

/// `1/2 ||Ax - y||^2 + lambda ||W_d x||_1` with `W_d` the Haar detail
/// coefficients.
pub fn cs_objective(x: &ComplexImage, y: &KSpaceData, cfg: &CSConfig) -> Result<f64> {
    let haar = Haar::new(cfg.levels);
    let k = fft2c(x);
    let mut fit = 0.0;
    for r in y.mask().lines() {
        for (a, b) in k.row(r).iter().zip(y.kspace().row(r)) {
            fit += (a - b).norm_sqr();
        }
    }
    let coef = haar.forward(x)?;
    let detail = haar.detail_mask(x.shape());
    let l1: f64 = coef.data().iter().zip(&detail).filter(|(_, &d)| d).map(|(z, _)| z.norm()).sum();
    Ok(0.5 * fit + cfg.lambda * l1)
}

fn soft(z: Complex64, t: f64) -> Complex64 {
    let n = z.norm();
    if n <= t {
        Complex64::default()
    } else {
        z * (1.0 - t / n)
    }
}

/// Proximal operator of `t ||W_d x||_1`; exact because `W` is orthonormal.
pub fn prox_l1(x: &ComplexImage, t: f64, haar: &Haar) -> Result<ComplexImage> {
    let coef = haar.forward(x)?;
    let detail = haar.detail_mask(x.shape());
    let data = coef.data().iter().zip(&detail).map(|(&z, &d)| if d { soft(z, t) } else { z }).collect();
    haar.inverse(&ComplexImage::new(x.height(), x.width(), data)?)
}

/// One proximal-gradient step with unit step size. `A^T A` is an orthogonal
/// projection, so the gradient's Lipschitz constant is 1 and
/// `v - grad f(v) = DC(v)`.
pub fn prox_grad_step(v: &ComplexImage, y: &KSpaceData, cfg: &CSConfig, haar: &Haar) -> Result<ComplexImage> {
    prox_l1(&data_consistency(v, y)?, cfg.lambda, haar)
}

/// Monotone FISTA from the zero-filled start.
pub fn recon_cs(y: &KSpaceData, cfg: &CSConfig) -> Result<CsResult> {
    cfg.validate()?;
    let haar = Haar::new(cfg.levels);
    haar.check(y.shape())?;
    let mut x = adjoint(y);
    let mut fx = cs_objective(&x, y, cfg)?;
    let mut v = x.clone();
    let mut t = 1.0f64;
    let mut objective = vec![fx];
    for it in 1..=cfg.max_iters {
        let z = prox_grad_step(&v, y, cfg, &haar)?;
        let fz = cs_objective(&z, y, cfg)?;
        let x_prev = x.clone();
        let f_prev = fx;
        if fz <= fx {
            x = z.clone();
            fx = fz;
        }
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let (a, b) = (t / t_next, (t - 1.0) / t_next);
        v = ComplexImage::new(
            x.height(),
            x.width(),
            x.data()
                .iter()
                .zip(z.data())
                .zip(x_prev.data())
                .map(|((&xk, &zk), &xp)| xk + (zk - xk) * a + (xk - xp) * b)
                .collect(),
        )?;
        t = t_next;
        objective.push(fx);
        if !fx.is_finite() {
            return Err(Error::NonFinite("CS objective".into()));
        }
        // Only a strictly productive step may end the run; the monotone
        // variant can stall for an iteration while momentum turns.
        if fx < f_prev && (f_prev - fx) <= cfg.tol * f_prev.abs().max(f64::MIN_POSITIVE) {
            return Ok(CsResult {
                image: x,
                objective,
                iterations: it,
                converged: true,
            });
        }
        if fx == 0.0 {
            return Ok(CsResult {
                image: x,
                objective,
                iterations: it,
                converged: true,
            });
        }
    }
    Ok(CsResult {
        image: x,
        objective,
        iterations: cfg.max_iters,
        converged: false,
    })
}

/// Norm of the proximal-gradient fixed-point residual relative to `||x||`;
/// zero exactly at a minimizer.
pub fn optimality_residual(x: &ComplexImage, y: &KSpaceData, cfg: &CSConfig) -> Result<f64> {
    let haar = Haar::new(cfg.levels);
    let step = prox_grad_step(x, y, cfg, &haar)?;
    Ok(step.zip_map(x, |a, b| a - b)?.norm() / x.norm().max(f64::MIN_POSITIVE))
}
