use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::ConditionSet;
use crate::kspace::RealImage;
use crate::netcore::ChannelStack;
use crate::phantom::{CorpusItem, MetaVector, PhantomSpec, Task, C1_META_SLOTS, C2_META_SLOTS};
use crate::register::{apply_rigid, RigidTransform2D};

/// Which prediction conditions are present.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Combo {
    Both,
    C1,
    C2,
    None,
}

impl Combo {
    pub const ALL: [Combo; 4] = [Combo::Both, Combo::C1, Combo::C2, Combo::None];

    pub fn name(self) -> &'static str {
        match self {
            Combo::Both => "both",
            Combo::C1 => "c1",
            Combo::C2 => "c2",
            Combo::None => "none",
        }
    }

    fn present(self) -> (bool, bool) {
        match self {
            Combo::Both => (true, true),
            Combo::C1 => (true, false),
            Combo::C2 => (false, true),
            Combo::None => (false, false),
        }
    }
}

impl fmt::Display for Combo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Combo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Combo::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown condition combination `{s}`")))
    }
}

/// One corpus item seen through a task: what is acquired, what is
/// predicted from what, and which raw contrast serves as the direct prior.
#[derive(Clone, Debug)]
pub struct TaskItem {
    pub id: String,
    pub spec: PhantomSpec,
    /// Fully sampled target in the acquisition frame.
    pub truth: RealImage,
    pub support: Vec<bool>,
    /// What the prediction net should produce, in the condition frame.
    pub pred_target: RealImage,
    pub pred_support: Vec<bool>,
    /// `[below, center, above]` of the two condition contrasts.
    pub cond_c1: [RealImage; 3],
    pub cond_c2: [RealImage; 3],
    pub meta: MetaVector,
    /// Raw contrast used by the direct-prior method, in the condition frame.
    pub direct_prior: RealImage,
    /// The direct prior shows the target contrast, so registering it to
    /// the acquisition by correlation is meaningful.
    pub direct_same_contrast: bool,
    /// Index of the direct prior's contrast, for slice stacks.
    pub direct_contrast: usize,
    /// Maps the condition frame onto the acquisition frame.
    pub frame: RigidTransform2D,
    pub change_magnitude: Option<f64>,
}

impl TaskItem {
    /// Flair analog: C1 and C2 predict C3, all co-registered; C2 is the
    /// direct prior. Longitudinal analog: baseline C1 and C2 predict the
    /// follow-up C1 in the baseline frame; baseline C1 is the direct prior
    /// and the follow-up is acquired with a rigid offset.
    pub fn from_corpus(task: Task, item: &CorpusItem) -> Result<Self> {
        let src = item.source();
        let slices = |k: usize| src.slices(k).map(|s| s.clone());
        match (task, item.pair()) {
            (Task::Flair, None) => Ok(TaskItem {
                id: item.entry.id.clone(),
                spec: item.entry.spec.clone(),
                truth: src.contrasts[2].clone(),
                support: src.support_mask.clone(),
                pred_target: src.contrasts[2].clone(),
                pred_support: src.support_mask.clone(),
                cond_c1: slices(0),
                cond_c2: slices(1),
                meta: item.meta(),
                direct_prior: src.contrasts[1].clone(),
                direct_same_contrast: false,
                direct_contrast: 1,
                frame: RigidTransform2D::IDENTITY,
                change_magnitude: None,
            }),
            (Task::Longitudinal, Some(p)) => Ok(TaskItem {
                id: item.entry.id.clone(),
                spec: item.entry.spec.clone(),
                truth: p.followup.contrasts[0].clone(),
                support: p.followup.support_mask.clone(),
                pred_target: p.followup_aligned.contrasts[0].clone(),
                pred_support: p.followup_aligned.support_mask.clone(),
                cond_c1: slices(0),
                cond_c2: slices(1),
                meta: item.meta(),
                direct_prior: src.contrasts[0].clone(),
                direct_same_contrast: true,
                direct_contrast: 0,
                frame: p.offset,
                change_magnitude: Some(p.change_magnitude),
            }),
            _ => Err(Error::InvalidArgument(format!("corpus item {} does not fit task {:?}", item.entry.id, task))),
        }
    }

    pub fn size(&self) -> usize {
        self.truth.height()
    }

    /// Moves a condition-frame image into the acquisition frame with the
    /// true offset (training only; inference estimates it).
    pub fn to_acquisition_frame(&self, img: &RealImage) -> RealImage {
        apply_rigid(img, &self.frame)
    }

    pub fn prediction_conditions(&self, combo: Combo) -> Result<ConditionSet> {
        let stack = |s: &[RealImage; 3]| {
            let (h, w) = s[0].shape();
            ChannelStack::from_real(h, w, &[s[0].data(), s[1].data(), s[2].data()])
        };
        let mut cond = ConditionSet::new(self.meta.0.to_vec());
        cond.push("c1", stack(&self.cond_c1)?, &C1_META_SLOTS)?;
        cond.push("c2", stack(&self.cond_c2)?, &C2_META_SLOTS)?;
        let (a, b) = combo.present();
        cond.set_present("c1", a)?;
        cond.set_present("c2", b)?;
        Ok(cond)
    }
}

/// Channels the prediction net consumes: the state plus three slices per
/// condition contrast.
pub const PREDICTION_IN_CHANNELS: usize = 7;
