use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::net::{NetConfig, VectorFieldNet};
use crate::container::{DType, Tensor};
use crate::error::{Error, Result};

/// JSON sidecar stored next to the parameter tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: NetConfig,
    pub epoch: usize,
    pub val_loss: f64,
    pub seed: u64,
    pub param_hash: String,
    #[serde(default)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

pub fn param_hash(params: &[f64]) -> String {
    let mut h = Sha256::new();
    for p in params {
        h.update(p.to_le_bytes());
    }
    hex::encode(h.finalize())
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes `<stem>.prt` (flat f64 parameters) and `<stem>.json`.
pub fn save(
    net: &VectorFieldNet,
    path: &Path,
    epoch: usize,
    val_loss: f64,
    seed: u64,
    extra: serde_json::Map<String, serde_json::Value>,
) -> Result<CheckpointMeta> {
    let meta = CheckpointMeta {
        config: net.config().clone(),
        epoch,
        val_loss,
        seed,
        param_hash: param_hash(net.params()),
        extra,
    };
    Tensor::real(vec![net.param_count()], net.params().to_vec(), DType::F64)?.write(path)?;
    let side = sidecar_path(path);
    std::fs::write(&side, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&side, e))?;
    Ok(meta)
}

pub fn load(path: &Path) -> Result<(VectorFieldNet, CheckpointMeta)> {
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text)?;
    let params = Tensor::read(path)?.into_real()?;
    if param_hash(&params) != meta.param_hash {
        return Err(Error::Container(format!("{} does not match its sidecar hash", path.display())));
    }
    Ok((VectorFieldNet::from_params(&meta.config, params)?, meta))
}
