//! Rectified-flow training pairs and the two samplers.
//!
//! Both samplers run the same reverse loop from `t = N` to `t = 1`: estimate
//! the clean image from the predicted velocity, optionally project it onto
//! the measurements, and step along the straight line toward that estimate.
//! The reconstruction sampler projects (hard data consistency), the
//! prediction sampler has no measurements and does not.

mod condition;
mod field;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kspace::{data_consistency, ComplexImage, KSpaceData, RealImage};
use crate::netcore::ChannelStack;

pub use condition::{Condition, ConditionSet};
pub use field::{NetField, OracleField, VelocityField};

pub const DEFAULT_STEPS: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowSchedule {
    pub n_steps: usize,
    /// Seed of the initial-noise stream.
    pub seed: u64,
}

impl Default for FlowSchedule {
    fn default() -> Self {
        FlowSchedule {
            n_steps: DEFAULT_STEPS,
            seed: 0,
        }
    }
}

impl FlowSchedule {
    pub fn new(n_steps: usize, seed: u64) -> Result<Self> {
        let s = FlowSchedule { n_steps, seed };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(Error::InvalidArgument("flow schedule needs at least one step".into()));
        }
        Ok(())
    }

    pub fn with_seed(self, seed: u64) -> Self {
        FlowSchedule { seed, ..self }
    }
}

/// An image the flow can live on: real for predictions, complex for
/// reconstructions (two network channels).
pub trait FlowState: Clone + Sized {
    fn shape(&self) -> (usize, usize);
    /// `a * x + b * y`.
    fn lincomb(a: f64, x: &Self, b: f64, y: &Self) -> Result<Self>;
    fn standard_normal(height: usize, width: usize, rng: &mut ChaCha8Rng) -> Self;
    fn is_finite(&self) -> bool;
    fn to_stack(&self) -> ChannelStack;
    fn from_stack(s: &ChannelStack) -> Result<Self>;
    fn channels() -> usize;
}

impl FlowState for RealImage {
    fn shape(&self) -> (usize, usize) {
        RealImage::shape(self)
    }

    fn lincomb(a: f64, x: &Self, b: f64, y: &Self) -> Result<Self> {
        x.ensure_same_shape(y)?;
        let data = x.data().iter().zip(y.data()).map(|(u, v)| a * u + b * v).collect();
        RealImage::new(x.height(), x.width(), data)
    }

    fn standard_normal(height: usize, width: usize, rng: &mut ChaCha8Rng) -> Self {
        let data = (0..height * width).map(|_| StandardNormal.sample(rng)).collect();
        RealImage::new(height, width, data).expect("nonempty shape")
    }

    fn is_finite(&self) -> bool {
        self.data().iter().all(|v| v.is_finite())
    }

    fn to_stack(&self) -> ChannelStack {
        ChannelStack::new(1, self.height(), self.width(), self.data().to_vec()).expect("shape matches")
    }

    fn from_stack(s: &ChannelStack) -> Result<Self> {
        if s.channels != 1 {
            return Err(Error::Shape(format!("real state needs 1 channel, got {}", s.channels)));
        }
        RealImage::new(s.height, s.width, s.data.clone())
    }

    fn channels() -> usize {
        1
    }
}

impl FlowState for ComplexImage {
    fn shape(&self) -> (usize, usize) {
        ComplexImage::shape(self)
    }

    fn lincomb(a: f64, x: &Self, b: f64, y: &Self) -> Result<Self> {
        x.zip_map(y, |u, v| u * a + v * b)
    }

    /// Real and imaginary parts are independent unit normals.
    fn standard_normal(height: usize, width: usize, rng: &mut ChaCha8Rng) -> Self {
        let data = (0..height * width)
            .map(|_| {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                num_complex::Complex64::new(re, im)
            })
            .collect();
        ComplexImage::new(height, width, data).expect("nonempty shape")
    }

    fn is_finite(&self) -> bool {
        ComplexImage::is_finite(self)
    }

    fn to_stack(&self) -> ChannelStack {
        ChannelStack::from_complex(self)
    }

    fn from_stack(s: &ChannelStack) -> Result<Self> {
        s.to_complex()
    }

    fn channels() -> usize {
        2
    }
}

/// Straight-line interpolant at step `t` of `n` and its constant velocity:
/// `x_t = (1 - t/n) x0 + (t/n) x1`, `v = x1 - x0`.
pub fn make_training_pair<S: FlowState>(x0: &S, x1: &S, t: usize, n: usize) -> Result<(S, S)> {
    if n == 0 || t == 0 || t > n {
        return Err(Error::InvalidArgument(format!("training step {t} outside 1..={n}")));
    }
    let s = t as f64 / n as f64;
    let x_t = S::lincomb(1.0 - s, x0, s, x1)?;
    let v = S::lincomb(1.0, x1, -1.0, x0)?;
    Ok((x_t, v))
}

/// The reverse loop. `project` maps the clean-image estimate to the image
/// the step heads for.
fn reverse_loop<S: FlowState>(
    field: &dyn VelocityField<S>,
    cond: &ConditionSet,
    (height, width): (usize, usize),
    sched: &FlowSchedule,
    project: impl Fn(&S) -> Result<S>,
) -> Result<S> {
    sched.validate()?;
    let n = sched.n_steps;
    let nf = n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(sched.seed);
    let mut x = S::standard_normal(height, width, &mut rng);
    for t in (1..=n).rev() {
        let tf = t as f64;
        let v = field.velocity(&x, t, n, cond)?;
        if v.shape() != x.shape() {
            return Err(Error::Shape(format!("velocity {:?} vs state {:?}", v.shape(), x.shape())));
        }
        let x0_hat = S::lincomb(1.0, &x, -tf / nf, &v)?;
        let x0_target = project(&x0_hat)?;
        let v_corr = S::lincomb(nf / tf, &x, -nf / tf, &x0_target)?;
        x = S::lincomb(1.0, &x, -1.0 / nf, &v_corr)?;
        if !x.is_finite() {
            return Err(Error::NonFinite(format!("flow state at step {t}")));
        }
    }
    Ok(x)
}

/// Generates an image from the conditions alone. Without measurements the
/// clean-image estimate is used as is.
pub fn sample_prediction(
    field: &dyn VelocityField<RealImage>,
    cond: &ConditionSet,
    sched: &FlowSchedule,
) -> Result<RealImage> {
    let shape = cond.spatial_shape()?;
    reverse_loop(field, cond, shape, sched, |x| Ok(x.clone()))
}

/// Reconstructs from `y`, replacing the sampled k-space lines of every
/// clean-image estimate by the measurement.
pub fn sample_reconstruction(
    field: &dyn VelocityField<ComplexImage>,
    y: &KSpaceData,
    cond: &ConditionSet,
    sched: &FlowSchedule,
) -> Result<ComplexImage> {
    if !y.is_finite() {
        return Err(Error::NonFinite("measurements".into()));
    }
    let shape = y.shape();
    if !cond.is_empty() && cond.spatial_shape()? != shape {
        return Err(Error::Shape(format!(
            "conditions {:?} vs measurements {:?}",
            cond.spatial_shape()?,
            shape
        )));
    }
    reverse_loop(field, cond, shape, sched, |x| data_consistency(x, y))
}
