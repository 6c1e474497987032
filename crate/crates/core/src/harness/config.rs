use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{CSConfig, Method};
use crate::error::{Error, Result};
use crate::flow::DEFAULT_STEPS;
use crate::netcore::TrainConfig;
use crate::phantom::{PhantomSpec, Task};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub size: usize,
    pub seed: u64,
    pub noise_sigma: f64,
    pub n_ellipses: usize,
    pub offset_scale: f64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            n_train: 50,
            n_val: 10,
            n_test: 50,
            size: 64,
            seed: 0,
            noise_sigma: 0.02,
            n_ellipses: 4,
            offset_scale: 1.0,
        }
    }
}

impl GenerateConfig {
    pub fn base_spec(&self) -> PhantomSpec {
        PhantomSpec {
            seed: self.seed,
            size: self.size,
            n_ellipses: self.n_ellipses,
            noise_sigma: self.noise_sigma,
            offset_scale: self.offset_scale,
            ..PhantomSpec::default()
        }
    }
}

/// Architecture and optimizer settings of one network role.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoleConfig {
    pub base_features: usize,
    pub depth: usize,
    pub embed_dim: usize,
    pub train: TrainConfig,
}

impl RoleConfig {
    fn with(base_features: usize, depth: usize, embed_dim: usize, epochs: usize) -> Self {
        RoleConfig {
            base_features,
            depth,
            embed_dim,
            train: TrainConfig {
                epochs,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetsConfig {
    pub prediction: RoleConfig,
    pub reconstruction: RoleConfig,
    pub lightrecon: RoleConfig,
    pub unet: RoleConfig,
    /// Size of the fixed validation batch of every role.
    pub val_samples: usize,
}

impl Default for NetsConfig {
    fn default() -> Self {
        NetsConfig {
            prediction: RoleConfig::with(16, 3, 32, 30),
            reconstruction: RoleConfig::with(16, 3, 32, 30),
            lightrecon: RoleConfig::with(24, 2, 0, 10),
            unet: RoleConfig::with(16, 3, 0, 30),
            val_samples: 32,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskKind {
    Greedy,
    Uniform,
    Random,
    GaussianRandom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskConfig {
    pub kind: MaskKind,
    /// Training images the greedy design scores candidates on.
    pub design_sample: usize,
    pub seed: u64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        MaskConfig {
            kind: MaskKind::Greedy,
            design_sample: crate::maskdesign::DEFAULT_DESIGN_SAMPLE,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowConfig {
    /// Step count the nets are trained with.
    pub train_steps: usize,
    /// Step count used when sampling.
    pub sample_steps: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            train_steps: DEFAULT_STEPS,
            sample_steps: DEFAULT_STEPS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsTuning {
    pub grid: Vec<f64>,
    /// Validation images used to choose lambda.
    pub cases: usize,
    pub base: CSConfig,
}

impl Default for CsTuning {
    fn default() -> Self {
        CsTuning {
            grid: vec![0.003, 0.01, 0.03, 0.1],
            cases: 8,
            base: CSConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub corpus: PathBuf,
    pub output: PathBuf,
    pub task: Task,
    pub accelerations: Vec<usize>,
    pub methods: Vec<Method>,
    pub seed: u64,
    pub generate: GenerateConfig,
    pub nets: NetsConfig,
    pub flow: FlowConfig,
    pub mask: MaskConfig,
    pub cs: CsTuning,
    /// Register priors to the light reconstruction before use.
    pub register: bool,
    /// Also search +-5 slices for the prior; needs phantom specs to render
    /// neighbouring slices.
    pub z_search: bool,
    /// Simulate this many receive coils and combine them before the
    /// single-channel pipeline.
    pub coils: Option<usize>,
    /// Evaluate only the first `n` test images.
    pub eval_limit: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            corpus: PathBuf::from("corpus"),
            output: PathBuf::from("runs"),
            task: Task::Flair,
            accelerations: vec![4, 8, 12],
            methods: Method::ALL.to_vec(),
            seed: 0,
            generate: GenerateConfig::default(),
            nets: NetsConfig::default(),
            flow: FlowConfig::default(),
            mask: MaskConfig::default(),
            cs: CsTuning::default(),
            register: true,
            z_search: false,
            coils: None,
            eval_limit: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.accelerations.is_empty() || self.accelerations.contains(&0) {
            return Err(Error::InvalidArgument("accelerations must be nonempty and >= 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidArgument("no methods selected".into()));
        }
        if self.flow.train_steps == 0 || self.flow.sample_steps == 0 {
            return Err(Error::InvalidArgument("flow step counts must be >= 1".into()));
        }
        if self.coils == Some(0) {
            return Err(Error::InvalidArgument("coil count must be >= 1".into()));
        }
        self.generate.base_spec().validate()
    }
}
