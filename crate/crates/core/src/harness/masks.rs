use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, MaskKind};
use super::data::TaskItem;
use super::write_json;
use crate::container::Tensor;
use crate::error::{Error, Result};
use crate::kspace::CartesianMask;
use crate::maskdesign::{
    greedy_design, make_random, make_uniform, DesignImage, Density, LightNetProxy, MaskDesignReport, ReconProxy,
    ZeroFilledProxy,
};
use crate::netcore::VectorFieldNet;

pub const MASK_DIR: &str = "masks";

/// One sampling mask per acceleration.
#[derive(Clone, Debug, Default)]
pub struct MaskSet {
    masks: BTreeMap<usize, CartesianMask>,
}

impl MaskSet {
    pub fn insert(&mut self, r: usize, mask: CartesianMask) {
        self.masks.insert(r, mask);
    }

    pub fn get(&self, r: usize) -> Result<&CartesianMask> {
        self.masks
            .get(&r)
            .ok_or_else(|| Error::InvalidArgument(format!("no mask for R = {r}; run design-mask first")))
    }

    pub fn all(&self) -> Vec<&CartesianMask> {
        self.masks.values().collect()
    }

    pub fn hashes(&self) -> BTreeMap<String, String> {
        self.masks.iter().map(|(r, m)| (format!("R{r}"), mask_hash(m))).collect()
    }
}

/// sha256 over the acceleration and the line selection.
pub fn mask_hash(mask: &CartesianMask) -> String {
    let mut h = Sha256::new();
    h.update((mask.acceleration() as u64).to_le_bytes());
    h.update(mask.selected().iter().map(|&s| s as u8).collect::<Vec<_>>());
    hex::encode(h.finalize())
}

pub(crate) fn mask_path(output: &Path, r: usize) -> PathBuf {
    output.join(MASK_DIR).join(format!("R{r}.prt"))
}

#[derive(Serialize, Deserialize)]
struct MaskRecord {
    acceleration: usize,
    kind: MaskKind,
    lines: Vec<usize>,
    hash: String,
    design: Option<MaskDesignReport>,
}

/// Builds the configured mask for every acceleration and writes
/// `masks/R<r>.prt` with a JSON record. Greedy design scores candidates on
/// the first `design_sample` training targets, through the light net when
/// one is given.
pub fn design_masks(cfg: &ExperimentConfig, train: &[TaskItem], light: Option<&VectorFieldNet>) -> Result<MaskSet> {
    let first = train
        .first()
        .ok_or_else(|| Error::InvalidArgument("mask design needs training images".into()))?;
    let lines = first.size();
    let sample = train
        .iter()
        .take(cfg.mask.design_sample.max(1))
        .map(|t| {
            Ok(DesignImage {
                image: t.truth.to_complex()?,
                support: Some(t.support.clone()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let proxy: Box<dyn ReconProxy + '_> = match light {
        Some(net) => Box::new(LightNetProxy {
            net,
            label: crate::netcore::checkpoint::param_hash(net.params())[..12].to_string(),
        }),
        None => Box::new(ZeroFilledProxy),
    };
    let mut set = MaskSet::default();
    for &r in &cfg.accelerations {
        let (mask, design) = match cfg.mask.kind {
            MaskKind::Greedy => {
                let rep = greedy_design(&sample, r, proxy.as_ref())?;
                (rep.mask.clone(), Some(rep))
            }
            MaskKind::Uniform => (make_uniform(lines, r)?, None),
            MaskKind::Random => (make_random(lines, r, cfg.mask.seed, Density::Uniform)?, None),
            MaskKind::GaussianRandom => (make_random(lines, r, cfg.mask.seed, Density::GaussianCenter)?, None),
        };
        let path = mask_path(&cfg.output, r);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        mask.to_tensor().write(&path)?;
        write_json(
            &path.with_extension("json"),
            &MaskRecord {
                acceleration: r,
                kind: cfg.mask.kind,
                lines: mask.lines(),
                hash: mask_hash(&mask),
                design,
            },
        )?;
        set.insert(r, mask);
    }
    Ok(set)
}

/// Reads the masks written by [`design_masks`].
pub fn load_masks(output: &Path, accelerations: &[usize]) -> Result<MaskSet> {
    let mut set = MaskSet::default();
    for &r in accelerations {
        let path = mask_path(output, r);
        if !path.exists() {
            return Err(Error::InvalidArgument(format!(
                "no mask for R = {r} at {}; run design-mask first",
                path.display()
            )));
        }
        set.insert(r, CartesianMask::from_tensor(Tensor::read(&path)?, Some(r))?);
    }
    Ok(set)
}
