use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::{ExperimentConfig, RoleConfig};
use super::data::{Combo, TaskItem, PREDICTION_IN_CHANNELS};
use super::masks::{load_masks, MaskSet};
use super::{derive_seed, file_hash, write_json};
use crate::baselines::{recon_conditions, RECON_META_LEN};
use crate::error::{Error, Result};
use crate::flow::{make_training_pair, sample_prediction, FlowSchedule, FlowState, NetField};
use crate::kspace::{adjoint, apply_forward, ComplexImage, RealImage};
use crate::netcore::{checkpoint, train, BatchSampler, ChannelStack, NetConfig, Sample, TrainReport, TrainState, VectorFieldNet};
use crate::phantom::{build_corpus, Corpus, CorpusManifest, Split, META_LEN};

pub const CHECKPOINT_DIR: &str = "checkpoints";

/// Seed stream of the predicted priors the pred-prior net trains on.
const TRAIN_PRIOR_STREAM: u64 = 0x7072_696f;
const VAL_STREAM: u64 = 0x76616c;

/// One trained network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Prediction,
    ReconNoPrior,
    ReconDirectPrior,
    ReconPredPrior,
    LightRecon,
    Unet,
}

impl Role {
    pub const ALL: [Role; 6] = [
        Role::Prediction,
        Role::ReconNoPrior,
        Role::ReconDirectPrior,
        Role::ReconPredPrior,
        Role::LightRecon,
        Role::Unet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Role::Prediction => "prediction",
            Role::ReconNoPrior => "recon-noprior",
            Role::ReconDirectPrior => "recon-directprior",
            Role::ReconPredPrior => "recon-predprior",
            Role::LightRecon => "lightrecon",
            Role::Unet => "unet",
        }
    }

    pub fn checkpoint_path(self, output: &Path) -> PathBuf {
        output.join(CHECKPOINT_DIR).join(format!("{}.prt", self.name()))
    }

    fn index(self) -> u64 {
        self as u64
    }

    fn settings(self, cfg: &ExperimentConfig) -> &RoleConfig {
        match self {
            Role::Prediction => &cfg.nets.prediction,
            Role::ReconNoPrior | Role::ReconDirectPrior | Role::ReconPredPrior => &cfg.nets.reconstruction,
            Role::LightRecon => &cfg.nets.lightrecon,
            Role::Unet => &cfg.nets.unet,
        }
    }

    fn uses_masks(self) -> bool {
        self != Role::Prediction
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Role::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown role `{s}`")))
    }
}

/// What `train` is asked for; `reconstruction` covers the three flow
/// reconstruction nets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainTarget {
    Prediction,
    Reconstruction,
    LightRecon,
    Unet,
}

impl TrainTarget {
    pub fn roles(self) -> &'static [Role] {
        match self {
            TrainTarget::Prediction => &[Role::Prediction],
            TrainTarget::Reconstruction => &[Role::ReconNoPrior, Role::ReconDirectPrior, Role::ReconPredPrior],
            TrainTarget::LightRecon => &[Role::LightRecon],
            TrainTarget::Unet => &[Role::Unet],
        }
    }
}

impl FromStr for TrainTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prediction" => Ok(TrainTarget::Prediction),
            "reconstruction" => Ok(TrainTarget::Reconstruction),
            "lightrecon" => Ok(TrainTarget::LightRecon),
            "unet" => Ok(TrainTarget::Unet),
            other => other.parse::<Role>().map(|r| match r {
                Role::Prediction => TrainTarget::Prediction,
                Role::LightRecon => TrainTarget::LightRecon,
                Role::Unet => TrainTarget::Unet,
                _ => TrainTarget::Reconstruction,
            }),
        }
    }
}

/// Architecture of a role at the configured image size.
pub fn net_config(role: Role, cfg: &ExperimentConfig) -> NetConfig {
    let s = role.settings(cfg);
    let flow = |in_channels, out_channels, meta_len| NetConfig {
        in_channels,
        out_channels,
        base_features: s.base_features,
        depth: s.depth,
        embed_dim: s.embed_dim,
        meta_len,
        has_time: true,
        time_steps: cfg.flow.train_steps,
    };
    let direct = NetConfig {
        in_channels: 2,
        out_channels: 2,
        base_features: s.base_features,
        depth: s.depth,
        embed_dim: 0,
        meta_len: 0,
        has_time: false,
        time_steps: 1,
    };
    match role {
        Role::Prediction => flow(PREDICTION_IN_CHANNELS, 1, META_LEN),
        Role::ReconNoPrior => flow(4, 2, RECON_META_LEN),
        Role::ReconDirectPrior | Role::ReconPredPrior => flow(5, 2, RECON_META_LEN),
        Role::LightRecon | Role::Unet => direct,
    }
}

/// Writes the configured corpus.
pub fn generate_corpus(cfg: &ExperimentConfig) -> Result<CorpusManifest> {
    let g = &cfg.generate;
    build_corpus(&cfg.corpus, g.n_train, g.n_val, g.n_test, &g.base_spec(), cfg.task)
}

/// Loads the corpus and views one split through the configured task.
pub fn load_task_items(cfg: &ExperimentConfig, corpus: &Corpus, split: Split) -> Result<Vec<TaskItem>> {
    if corpus.task() != cfg.task {
        return Err(Error::InvalidArgument(format!(
            "corpus holds {:?} data, config asks for {:?}",
            corpus.task(),
            cfg.task
        )));
    }
    corpus.split(split).into_iter().map(|i| TaskItem::from_corpus(cfg.task, i)).collect()
}

type Draw<'a> = Box<dyn Fn(&[TaskCase], &mut ChaCha8Rng) -> Result<Sample> + Sync + 'a>;

/// A training image with the prior its role conditions on.
struct TaskCase {
    item: TaskItem,
    truth: ComplexImage,
    prior: Option<RealImage>,
}

struct RoleSampler<'a> {
    train: Vec<TaskCase>,
    draw: Draw<'a>,
    val: Vec<Sample>,
}

impl BatchSampler for RoleSampler<'_> {
    fn sample_batch(&self, rng: &mut ChaCha8Rng, batch_size: usize) -> Result<Vec<Sample>> {
        (0..batch_size).map(|_| (self.draw)(&self.train, rng)).collect()
    }

    fn validation(&self) -> &[Sample] {
        &self.val
    }
}

fn pick<'c>(cases: &'c [TaskCase], rng: &mut ChaCha8Rng) -> &'c TaskCase {
    &cases[rng.random_range(0..cases.len())]
}

fn prediction_draw(steps: usize) -> Draw<'static> {
    Box::new(move |cases, rng| {
        let case = pick(cases, rng);
        let combo = Combo::ALL[rng.random_range(0..Combo::ALL.len())];
        let t = rng.random_range(1..=steps);
        let (h, w) = case.item.pred_target.shape();
        let noise = RealImage::standard_normal(h, w, rng);
        let (x_t, v) = make_training_pair(&case.item.pred_target, &noise, t, steps)?;
        let cond = case.item.prediction_conditions(combo)?;
        Ok(Sample {
            input: NetField::input(&x_t, &cond)?,
            t: Some(t as f64),
            meta: Some(cond.meta()),
            target: v.to_stack(),
        })
    })
}

fn recon_draw(steps: usize, masks: &MaskSet) -> Draw<'_> {
    Box::new(move |cases, rng| {
        let case = pick(cases, rng);
        let all = masks.all();
        let mask = all[rng.random_range(0..all.len())];
        let t = rng.random_range(1..=steps);
        let (h, w) = case.truth.shape();
        let noise = ComplexImage::standard_normal(h, w, rng);
        let y = apply_forward(&case.truth, mask)?;
        let cond = recon_conditions(&y, case.prior.as_ref())?;
        let (x_t, v) = make_training_pair(&case.truth, &noise, t, steps)?;
        Ok(Sample {
            input: NetField::input(&x_t, &cond)?,
            t: Some(t as f64),
            meta: Some(cond.meta()),
            target: v.to_stack(),
        })
    })
}

/// Residual target of the single-pass nets: `truth - zf`.
fn direct_draw(masks: &MaskSet) -> Draw<'_> {
    Box::new(move |cases, rng| {
        let case = pick(cases, rng);
        let all = masks.all();
        let mask = all[rng.random_range(0..all.len())];
        let zf = adjoint(&apply_forward(&case.truth, mask)?);
        let residual = case.truth.zip_map(&zf, |a, b| a - b)?;
        Ok(Sample {
            input: ChannelStack::from_complex(&zf),
            t: None,
            meta: None,
            target: ChannelStack::from_complex(&residual),
        })
    })
}

/// Predicted priors for training images, moved into the acquisition frame
/// with the known offset.
fn predicted_priors(items: &[TaskItem], pred: &VectorFieldNet, cfg: &ExperimentConfig, stream: u64) -> Result<Vec<RealImage>> {
    let field = NetField::new(pred);
    items
        .par_iter()
        .enumerate()
        .map(|(i, item)| {
            let sched = FlowSchedule::new(cfg.flow.sample_steps, derive_seed(cfg.seed, &[stream, i as u64]))?;
            let p = sample_prediction(&field, &item.prediction_conditions(Combo::Both)?, &sched)?;
            Ok(item.to_acquisition_frame(&p))
        })
        .collect()
}

fn cases(role: Role, items: Vec<TaskItem>, predicted: Option<Vec<RealImage>>) -> Result<Vec<TaskCase>> {
    let mut predicted = predicted.map(|v| v.into_iter());
    items
        .into_iter()
        .map(|item| {
            let prior = match role {
                Role::ReconDirectPrior => Some(item.to_acquisition_frame(&item.direct_prior)),
                Role::ReconPredPrior => predicted.as_mut().and_then(|p| p.next()),
                _ => None,
            };
            Ok(TaskCase {
                truth: item.truth.to_complex()?,
                item,
                prior,
            })
        })
        .collect()
}

/// Result of training one role.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub role: Role,
    pub checkpoint: PathBuf,
    pub param_hash: String,
    pub report: TrainReport,
    pub seconds: f64,
}

/// Trains one role on the train split, validates on the val split and
/// writes the best-validation checkpoint. The pred-prior net needs the
/// prediction checkpoint; every role but prediction needs designed masks.
pub fn train_role(role: Role, cfg: &ExperimentConfig, corpus: &Corpus) -> Result<TrainOutcome> {
    let start = Instant::now();
    let settings = role.settings(cfg);
    let train_items = load_task_items(cfg, corpus, Split::Train)?;
    let val_items = load_task_items(cfg, corpus, Split::Val)?;
    let masks = if role.uses_masks() {
        Some(load_masks(&cfg.output, &cfg.accelerations)?)
    } else {
        None
    };

    let (train_pred, val_pred) = if role == Role::ReconPredPrior {
        let path = Role::Prediction.checkpoint_path(&cfg.output);
        if !path.exists() {
            return Err(Error::MissingCheckpoint(Role::Prediction.name().into()));
        }
        let (pred, _) = checkpoint::load(&path)?;
        (
            Some(predicted_priors(&train_items, &pred, cfg, TRAIN_PRIOR_STREAM)?),
            Some(predicted_priors(&val_items, &pred, cfg, TRAIN_PRIOR_STREAM ^ VAL_STREAM)?),
        )
    } else {
        (None, None)
    };

    let steps = cfg.flow.train_steps;
    let draw: Draw<'_> = match (role, &masks) {
        (Role::Prediction, _) => prediction_draw(steps),
        (Role::LightRecon | Role::Unet, Some(m)) => direct_draw(m),
        (_, Some(m)) => recon_draw(steps, m),
        (_, None) => unreachable!("mask-using roles load masks above"),
    };
    let val_cases = cases(role, val_items, val_pred)?;
    let mut vrng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[VAL_STREAM, role.index()]));
    let val = (0..cfg.nets.val_samples.max(1))
        .map(|_| draw(&val_cases, &mut vrng))
        .collect::<Result<Vec<_>>>()?;
    let sampler = RoleSampler {
        train: cases(role, train_items, train_pred)?,
        draw,
        val,
    };

    let net_cfg = net_config(role, cfg);
    let net = VectorFieldNet::init(&net_cfg, derive_seed(cfg.seed, &[role.index(), settings.train.seed]))?;
    let mut tcfg = settings.train.clone();
    tcfg.seed = derive_seed(cfg.seed, &[role.index(), settings.train.seed, 1]);
    let (net, report) = train(TrainState::new(net, tcfg.lr), &sampler, &tcfg).map_err(|e| e.at_stage("train"))?;

    let mut extra = serde_json::Map::new();
    extra.insert("role".into(), json!(role.name()));
    extra.insert("task".into(), serde_json::to_value(cfg.task)?);
    let corpus_manifest = cfg.corpus.join("manifest.json");
    if corpus_manifest.exists() {
        extra.insert("corpus_manifest".into(), json!(file_hash(&corpus_manifest)?));
    }
    if let Some(m) = &masks {
        extra.insert("masks".into(), serde_json::to_value(m.hashes())?);
    }
    let path = role.checkpoint_path(&cfg.output);
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let meta = checkpoint::save(&net, &path, report.best_epoch, report.best_val_loss, tcfg.seed, extra)?;
    let outcome = TrainOutcome {
        role,
        checkpoint: path.clone(),
        param_hash: meta.param_hash,
        report,
        seconds: start.elapsed().as_secs_f64(),
    };
    write_json(&path.with_extension("train.json"), &outcome)?;
    Ok(outcome)
}
