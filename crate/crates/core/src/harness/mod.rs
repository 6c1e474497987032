//! Experiment orchestration: corpus generation, training of every network
//! role, mask design, the predict -> register -> reconstruct pipeline,
//! method sweeps and reports.
//!
//! All artifacts of one experiment live under its output directory:
//! `checkpoints/<role>.prt` (+ `.json` sidecar, `.train.json` curve),
//! `masks/R<r>.prt` (+ `.json` design report) and `eval/` for sweep results.

mod config;
mod data;
mod evaluate;
mod masks;
mod pipeline;
mod report;
mod roles;

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use config::{
    CsTuning, ExperimentConfig, FlowConfig, GenerateConfig, MaskConfig, MaskKind, NetsConfig, RoleConfig,
};
pub use data::{Combo, TaskItem, PREDICTION_IN_CHANNELS};
pub use evaluate::{
    evaluate, EvalOptions, Evaluation, ImageRow, LongitudinalGain, PredictionRow, PredictionScore, RegistrationRow,
    RunManifest, DIRECTIONAL_R, EVAL_DIR, HIGH_CHANGE, LOW_CHANGE,
};
pub use masks::{design_masks, load_masks, mask_hash, MaskSet};
pub use pipeline::{
    measure, run_pipeline, AlignedPrior, Models, Pipeline, PipelineOutcome, PipelineRequest, PriorMode,
};
pub use report::{render_report, report_header};
pub use roles::{
    generate_corpus, load_task_items, net_config, train_role, Role, TrainOutcome, TrainTarget, CHECKPOINT_DIR,
};

/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "PREDRECON_THREADS";

/// Worker count requested through [`THREADS_ENV`], if any.
pub fn requested_threads() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(Error::InvalidArgument(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(None),
    }
}

/// Runs `f` on a dedicated pool of `threads` workers (all cores when `None`).
/// Results never depend on the worker count.
pub fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        b = b.num_threads(n);
    }
    let pool = b
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Mixes a base seed with a cell coordinate.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    for p in parts {
        h.update(p.to_le_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// sha256 of a file's bytes.
pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &serde_json::to_string_pretty(value)?)
}

