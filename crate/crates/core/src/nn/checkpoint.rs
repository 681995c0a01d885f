//! Two-file checkpoints sharing a basename: `<base>.meta.json` holds the
//! metadata, `<base>.w64` the parameters as little-endian `f64` in layer order
//! (weights row-major, then biases).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::nn::{Activation, MlpModel, NnError, Normalizer};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    /// `"flow"`, `"variance"`, `"bc"` or `"reflow"`.
    pub kind: String,
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
    pub time_dim: usize,
    pub seed: u64,
    pub step: u64,
    pub state_dim: usize,
    pub action_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_floor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_norm: Option<Normalizer>,
}

pub fn meta_path(base: &Path) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn weights_path(base: &Path) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(".w64");
    PathBuf::from(s)
}

pub fn checkpoint_exists(base: &Path) -> bool {
    meta_path(base).is_file() && weights_path(base).is_file()
}

pub fn save_checkpoint<T: Scalar>(
    base: &Path,
    meta: &CheckpointMeta,
    model: &MlpModel<T>,
) -> Result<(), NnError> {
    if meta.layer_dims != model.layer_dims() {
        return Err(NnError::Format(format!(
            "metadata dims {:?} disagree with model dims {:?}",
            meta.layer_dims,
            model.layer_dims()
        )));
    }
    if let Some(dir) = base.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let json = serde_json::to_string_pretty(meta).map_err(|e| NnError::Format(e.to_string()))?;
    fs::write(meta_path(base), json + "\n")?;
    let params = model.params();
    let mut bytes = Vec::with_capacity(params.len() * 8);
    for p in params {
        bytes.extend_from_slice(&p.as_f64().to_le_bytes());
    }
    fs::write(weights_path(base), bytes)?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(base: &Path) -> Result<(CheckpointMeta, MlpModel<T>), NnError> {
    let json = fs::read_to_string(meta_path(base))?;
    let meta: CheckpointMeta =
        serde_json::from_str(&json).map_err(|e| NnError::Format(e.to_string()))?;
    let bytes = fs::read(weights_path(base))?;
    if bytes.len() % 8 != 0 {
        return Err(NnError::Format(format!(
            "weight file length {} is not a multiple of 8",
            bytes.len()
        )));
    }
    let params: Vec<T> = bytes
        .chunks_exact(8)
        .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("chunk of 8"))))
        .collect();
    let mut model = MlpModel::zeros(&meta.layer_dims)?;
    model.set_params(&params)?;
    Ok((meta, model))
}
