use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::data::{Combo, TaskItem};
use super::roles::Role;
use crate::baselines::{
    recon_conditions, recon_cs, recon_unet, recon_zero_filled, CSConfig, Method,
};
use crate::error::{Error, Result};
use crate::flow::{sample_prediction, sample_reconstruction, FlowSchedule, NetField};
use crate::kspace::{apply_forward, simulate_and_combine, simulate_coils, CartesianMask, ComplexImage, KSpaceData, RealImage};
use crate::metrics::{psnr, ssim};
use crate::netcore::{checkpoint, VectorFieldNet};
use crate::phantom::{simulate_coil_maps, slice_stack};
use crate::register::{apply_rigid, estimate_rigid_in, light_recon, z_align, RigidTransform2D, SearchBox, Z_SEARCH};

/// Undersampled measurements of an item's target. With `coils`, each coil
/// is sampled separately, the coil images are combined, and the combined
/// image's sampled lines become the single-channel measurements.
pub fn measure(item: &TaskItem, mask: &CartesianMask, coils: Option<usize>) -> Result<KSpaceData> {
    let x = item.truth.to_complex()?;
    match coils {
        None => apply_forward(&x, mask),
        Some(n) => {
            let maps = simulate_coil_maps(n, item.size())?;
            let combined = simulate_and_combine(&simulate_coils(&x, &maps, mask)?, &maps)?;
            apply_forward(&combined, mask)
        }
    }
}

/// The trained networks found in an experiment directory.
#[derive(Clone, Debug, Default)]
pub struct Models {
    nets: BTreeMap<Role, VectorFieldNet>,
}

impl Models {
    /// Loads every checkpoint present under `output`.
    pub fn load(output: &Path) -> Result<Models> {
        let mut nets = BTreeMap::new();
        for role in Role::ALL {
            let path = role.checkpoint_path(output);
            if path.exists() {
                nets.insert(role, checkpoint::load(&path)?.0);
            }
        }
        Ok(Models { nets })
    }

    pub fn insert(&mut self, role: Role, net: VectorFieldNet) {
        self.nets.insert(role, net);
    }

    pub fn get(&self, role: Role) -> Option<&VectorFieldNet> {
        self.nets.get(&role)
    }

    pub fn require(&self, role: Role) -> Result<&VectorFieldNet> {
        self.get(role).ok_or_else(|| Error::MissingCheckpoint(role.name().into()))
    }

    /// Roles a method needs. The light net is optional everywhere.
    pub fn roles_for(method: Method) -> &'static [Role] {
        match method {
            Method::ZeroFilled | Method::Cs => &[],
            Method::Unet => &[Role::Unet],
            Method::FlowNoPrior => &[Role::ReconNoPrior],
            Method::FlowDirectPrior => &[Role::ReconDirectPrior],
            Method::FlowPredPrior => &[Role::Prediction, Role::ReconPredPrior],
        }
    }

    /// Fails with the first absent role any of `methods` needs.
    pub fn check(&self, methods: &[Method]) -> Result<()> {
        for &m in methods {
            for &r in Self::roles_for(m) {
                self.require(r)?;
            }
        }
        Ok(())
    }
}

/// Which prior feeds the reconstruction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorMode {
    /// Sampled by the prediction net from the condition contrasts.
    Predicted,
    /// The raw condition contrast, skipping prediction.
    Direct,
}

/// A prior moved into the acquisition frame.
#[derive(Clone, Debug)]
pub struct AlignedPrior {
    pub image: RealImage,
    pub transform: RigidTransform2D,
    pub z_shift: i32,
}

/// The stages of the two-stage pipeline. Each stage sees only its declared
/// inputs and tags its errors.
pub struct Pipeline<'a> {
    pub models: &'a Models,
    pub register: bool,
    pub z_search: bool,
    pub sample_steps: usize,
    pub cs: CSConfig,
}

impl Pipeline<'_> {
    pub fn predict(&self, item: &TaskItem, combo: Combo, seed: u64) -> Result<RealImage> {
        let run = || {
            let net = self.models.require(Role::Prediction)?;
            let sched = FlowSchedule::new(self.sample_steps, seed)?;
            sample_prediction(&NetField::new(net), &item.prediction_conditions(combo)?, &sched)
        };
        run().map_err(|e| e.at_stage("predict"))
    }

    /// Magnitude of the light reconstruction (zero-filled without a light net).
    pub fn light(&self, y: &KSpaceData) -> Result<RealImage> {
        light_recon(y, self.models.get(Role::LightRecon))
            .map(|x| x.magnitude_image())
            .map_err(|e| e.at_stage("light-recon"))
    }

    /// Estimates the rigid transform taking `prior` onto `light`. Without a
    /// light net the comparison runs through the sampling projection, since
    /// `light` is then the aliased zero-filled image.
    pub fn register(&self, prior: &RealImage, light: &RealImage, mask: &CartesianMask) -> Result<RigidTransform2D> {
        let projection = match self.models.get(Role::LightRecon) {
            Some(_) => None,
            None => Some(mask),
        };
        estimate_rigid_in(prior, light, &SearchBox::default(), projection)
            .map(|(t, _)| t)
            .map_err(|e| e.at_stage("register"))
    }

    /// Registers (when enabled and meaningful) and resamples a prior.
    /// `stack`, when given, holds the prior contrast's neighbouring slices
    /// for the through-plane search.
    pub fn align(
        &self,
        prior: &RealImage,
        same_contrast: bool,
        stack: Option<&[RealImage]>,
        light: &RealImage,
        mask: &CartesianMask,
    ) -> Result<AlignedPrior> {
        if !(self.register && same_contrast) {
            return Ok(AlignedPrior {
                image: prior.clone(),
                transform: RigidTransform2D::IDENTITY,
                z_shift: 0,
            });
        }
        let t = self.register(prior, light, mask)?;
        let run = || {
            let (mut image, mut z_shift) = (apply_rigid(prior, &t), 0);
            if let Some(stack) = stack.filter(|_| self.z_search) {
                let moved: Vec<RealImage> = stack.iter().map(|s| apply_rigid(s, &t)).collect();
                z_shift = z_align(&moved, light)?;
                if z_shift != 0 {
                    image = moved[(moved.len() as i32 / 2 + z_shift) as usize].clone();
                }
            }
            Ok(AlignedPrior {
                image,
                transform: t,
                z_shift,
            })
        };
        run().map_err(|e: Error| e.at_stage("align"))
    }

    pub fn reconstruct(&self, method: Method, y: &KSpaceData, prior: Option<&RealImage>, seed: u64) -> Result<ComplexImage> {
        let run = || match method {
            Method::ZeroFilled => Ok(recon_zero_filled(y)),
            Method::Cs => Ok(recon_cs(y, &self.cs)?.image),
            Method::Unet => recon_unet(y, self.models.require(Role::Unet)?),
            Method::FlowNoPrior | Method::FlowDirectPrior | Method::FlowPredPrior => {
                let role = match method {
                    Method::FlowNoPrior => Role::ReconNoPrior,
                    Method::FlowDirectPrior => Role::ReconDirectPrior,
                    _ => Role::ReconPredPrior,
                };
                let prior = if method.needs_prior() {
                    Some(prior.ok_or_else(|| Error::InvalidArgument(format!("{method} needs a prior image")))?)
                } else {
                    None
                };
                let net = self.models.require(role)?;
                let cond = recon_conditions(y, prior)?;
                sample_reconstruction(&NetField::new(net), y, &cond, &FlowSchedule::new(self.sample_steps, seed)?)
            }
        };
        run().map_err(|e| e.at_stage("reconstruct"))
    }
}

fn stack_for(item: &TaskItem, enabled: bool) -> Result<Option<Vec<RealImage>>> {
    if !enabled || !item.direct_same_contrast {
        return Ok(None);
    }
    slice_stack(&item.spec, item.direct_contrast, Z_SEARCH as usize)
        .map(Some)
        .map_err(|e| e.at_stage("align"))
}

/// One pipeline run on a corpus item.
pub struct PipelineRequest<'a> {
    pub item: &'a TaskItem,
    pub mask: &'a CartesianMask,
    pub mode: PriorMode,
    /// Extra transform applied to the prior before the pipeline sees it.
    pub misalign: Option<RigidTransform2D>,
    pub coils: Option<usize>,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct PipelineOutcome {
    pub image: ComplexImage,
    pub prior: RealImage,
    pub transform: RigidTransform2D,
    pub z_shift: i32,
    pub psnr: f64,
    pub ssim: f64,
    pub consistency_error: f64,
}

/// predict (or take the raw contrast) -> light recon -> register -> align
/// -> reconstruct, scored against the item's ground truth.
pub fn run_pipeline(p: &Pipeline<'_>, req: &PipelineRequest<'_>) -> Result<PipelineOutcome> {
    let y = measure(req.item, req.mask, req.coils).map_err(|e| e.at_stage("measure"))?;
    let (raw, method, same) = match req.mode {
        PriorMode::Predicted => (p.predict(req.item, Combo::Both, req.seed)?, Method::FlowPredPrior, true),
        PriorMode::Direct => (req.item.direct_prior.clone(), Method::FlowDirectPrior, req.item.direct_same_contrast),
    };
    let raw = match &req.misalign {
        Some(t) => apply_rigid(&raw, t),
        None => raw,
    };
    let light = p.light(&y)?;
    let stack = match req.mode {
        PriorMode::Direct => stack_for(req.item, p.z_search)?,
        PriorMode::Predicted => None,
    };
    let aligned = p.align(&raw, same, stack.as_deref(), &light, req.mask)?;
    let image = p.reconstruct(method, &y, Some(&aligned.image), req.seed)?;
    let mag = image.magnitude();
    Ok(PipelineOutcome {
        psnr: psnr(req.item.truth.data(), &mag, &req.item.support)?,
        ssim: ssim(req.item.truth.data(), &mag, &req.item.support, req.item.truth.shape())?,
        consistency_error: y.consistency_error(&image),
        image,
        prior: aligned.image,
        transform: aligned.transform,
        z_shift: aligned.z_shift,
    })
}
