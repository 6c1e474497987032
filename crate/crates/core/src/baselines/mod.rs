//! Reference reconstructors and the uniform method registry.
//!
//! Every method, baseline or flow, is driven through [`Reconstructor`] with
//! the same request (measurements, optional prior, noise seed), so sweeps
//! treat them identically.

mod cs;
mod haar;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{sample_reconstruction, ConditionSet, FlowSchedule, NetField};
use crate::kspace::{adjoint, ComplexImage, KSpaceData, RealImage};
use crate::metrics::psnr;
use crate::netcore::{ChannelStack, VectorFieldNet};

pub use cs::{cs_objective, optimality_residual, prox_grad_step, prox_l1, recon_cs, CSConfig, CsResult};
pub use haar::Haar;

/// Metadata length of the reconstruction nets: sampled line fraction and a
/// prior-present flag.
pub const RECON_META_LEN: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "zf")]
    ZeroFilled,
    #[serde(rename = "cs")]
    Cs,
    #[serde(rename = "unet")]
    Unet,
    #[serde(rename = "flow-noprior")]
    FlowNoPrior,
    #[serde(rename = "flow-directprior")]
    FlowDirectPrior,
    #[serde(rename = "flow-predprior")]
    FlowPredPrior,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::ZeroFilled,
        Method::Cs,
        Method::Unet,
        Method::FlowNoPrior,
        Method::FlowDirectPrior,
        Method::FlowPredPrior,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::ZeroFilled => "zf",
            Method::Cs => "cs",
            Method::Unet => "unet",
            Method::FlowNoPrior => "flow-noprior",
            Method::FlowDirectPrior => "flow-directprior",
            Method::FlowPredPrior => "flow-predprior",
        }
    }

    pub fn is_flow(self) -> bool {
        matches!(self, Method::FlowNoPrior | Method::FlowDirectPrior | Method::FlowPredPrior)
    }

    pub fn needs_prior(self) -> bool {
        matches!(self, Method::FlowDirectPrior | Method::FlowPredPrior)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method `{s}`")))
    }
}

/// What every method is given.
#[derive(Clone, Copy, Debug)]
pub struct ReconRequest<'a> {
    pub y: &'a KSpaceData,
    pub prior: Option<&'a RealImage>,
    /// Seeds the initial noise of flow samplers; ignored by the others.
    pub seed: u64,
}

pub trait Reconstructor: Sync {
    fn method(&self) -> Method;
    fn reconstruct(&self, req: &ReconRequest<'_>) -> Result<ComplexImage>;
}

pub fn recon_zero_filled(y: &KSpaceData) -> ComplexImage {
    adjoint(y)
}

/// Direct mapping `zf + net(zf)`; a single forward pass with no data
/// consistency.
pub fn recon_unet(y: &KSpaceData, net: &VectorFieldNet) -> Result<ComplexImage> {
    let cfg = net.config();
    if cfg.in_channels != 2 || cfg.out_channels != 2 {
        return Err(Error::Shape(format!(
            "direct-mapping net must be 2 -> 2 channels, got {} -> {}",
            cfg.in_channels, cfg.out_channels
        )));
    }
    let zf = adjoint(y);
    let out = net.forward(&ChannelStack::from_complex(&zf), None, None)?;
    Ok(&zf + &out.to_complex()?)
}

/// Conditions of the reconstruction nets: the zero-filled image and, when
/// given, the prior as one real channel.
pub fn recon_conditions(y: &KSpaceData, prior: Option<&RealImage>) -> Result<ConditionSet> {
    let frac = y.mask().count() as f64 / y.mask().line_count() as f64;
    let mut cond = ConditionSet::new(vec![frac, prior.map_or(0.0, |_| 1.0)]);
    cond.push("zf", ChannelStack::from_complex(&adjoint(y)), &[0])?;
    if let Some(p) = prior {
        if p.shape() != y.shape() {
            return Err(Error::Shape(format!("prior {:?} vs measurements {:?}", p.shape(), y.shape())));
        }
        cond.push("prior", ChannelStack::new(1, p.height(), p.width(), p.data().to_vec())?, &[1])?;
    }
    Ok(cond)
}

/// Flow reconstruction conditioned on a raw (registered) contrast image.
pub fn recon_direct_prior(
    y: &KSpaceData,
    prior: &RealImage,
    net: &VectorFieldNet,
    sched: &FlowSchedule,
) -> Result<ComplexImage> {
    sample_reconstruction(&NetField::new(net), y, &recon_conditions(y, Some(prior))?, sched)
}

pub struct ZeroFilled;

impl Reconstructor for ZeroFilled {
    fn method(&self) -> Method {
        Method::ZeroFilled
    }

    fn reconstruct(&self, req: &ReconRequest<'_>) -> Result<ComplexImage> {
        Ok(recon_zero_filled(req.y))
    }
}

pub struct Cs {
    pub config: CSConfig,
}

impl Reconstructor for Cs {
    fn method(&self) -> Method {
        Method::Cs
    }

    fn reconstruct(&self, req: &ReconRequest<'_>) -> Result<ComplexImage> {
        Ok(recon_cs(req.y, &self.config)?.image)
    }
}

pub struct Unet<'a> {
    pub net: &'a VectorFieldNet,
}

impl Reconstructor for Unet<'_> {
    fn method(&self) -> Method {
        Method::Unet
    }

    fn reconstruct(&self, req: &ReconRequest<'_>) -> Result<ComplexImage> {
        recon_unet(req.y, self.net)
    }
}

/// Any of the three flow methods. They differ in the trained net and in
/// which prior the caller hands over.
pub struct FlowRecon<'a> {
    pub method: Method,
    pub net: &'a VectorFieldNet,
    pub schedule: FlowSchedule,
}

impl<'a> FlowRecon<'a> {
    pub fn new(method: Method, net: &'a VectorFieldNet, schedule: FlowSchedule) -> Result<Self> {
        if !method.is_flow() {
            return Err(Error::InvalidArgument(format!("{method} is not a flow method")));
        }
        Ok(FlowRecon { method, net, schedule })
    }
}

impl Reconstructor for FlowRecon<'_> {
    fn method(&self) -> Method {
        self.method
    }

    fn reconstruct(&self, req: &ReconRequest<'_>) -> Result<ComplexImage> {
        let prior = if self.method.needs_prior() {
            Some(req.prior.ok_or_else(|| Error::InvalidArgument(format!("{} needs a prior image", self.method)))?)
        } else {
            None
        };
        let cond = recon_conditions(req.y, prior)?;
        sample_reconstruction(&NetField::new(self.net), req.y, &cond, &self.schedule.with_seed(req.seed))
    }
}

/// A validation case for choosing the CS weight.
pub struct TuneCase<'a> {
    pub y: &'a KSpaceData,
    pub truth: &'a ComplexImage,
    pub support: &'a [bool],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LambdaTuning {
    pub best: f64,
    /// `(lambda, mean PSNR)` for every grid value.
    pub scores: Vec<(f64, f64)>,
}

/// Picks the grid value with the highest mean magnitude PSNR; ties go to
/// the earlier grid entry.
pub fn tune_lambda(cases: &[TuneCase<'_>], grid: &[f64], base: &CSConfig) -> Result<LambdaTuning> {
    if cases.is_empty() || grid.is_empty() {
        return Err(Error::InvalidArgument("lambda tuning needs cases and a grid".into()));
    }
    let scores = grid
        .iter()
        .map(|&lambda| {
            let cfg = CSConfig { lambda, ..base.clone() };
            let psnrs = cases
                .par_iter()
                .map(|c| psnr(&c.truth.magnitude(), &recon_cs(c.y, &cfg)?.image.magnitude(), c.support))
                .collect::<Result<Vec<f64>>>()?;
            Ok((lambda, psnrs.iter().sum::<f64>() / psnrs.len() as f64))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let best = scores
        .iter()
        .fold((f64::NAN, f64::NEG_INFINITY), |a, &b| if b.1 > a.1 { b } else { a })
        .0;
    Ok(LambdaTuning { best, scores })
}

#[cfg(test)]
mod tests;
