//! Checkpoints: a safetensors blob with parameters and optimizer moments, and
//! a `meta.json` sidecar. Only the sidecar format is stable.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

use super::optim::Optimizer;
use super::EvalPoint;
use crate::error::{LabError, Result};
use crate::model::Monet;

pub const CHECKPOINT_FILE: &str = "checkpoint.safetensors";
pub const META_FILE: &str = "meta.json";
pub(crate) const HISTORY_TAIL: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub step: u64,
    pub config_hash: String,
    pub condition: String,
    pub seed: u64,
    pub deterministic: bool,
    pub initial: Option<EvalPoint>,
    pub loss_history_tail: Vec<EvalPoint>,
}

pub(crate) fn save(dir: &Path, model: &Monet, opt: &Optimizer, meta: &CheckpointMeta) -> Result<()> {
    let mut tensors: HashMap<String, Tensor> = opt.state_tensors();
    for (name, var) in model.params().named() {
        tensors.insert(format!("param.{name}"), var.as_tensor().clone());
    }
    // Write-then-rename so a crash never leaves a torn checkpoint behind.
    let tmp = dir.join(format!("{CHECKPOINT_FILE}.tmp"));
    candle_core::safetensors::save(&tensors, &tmp)?;
    let blob = dir.join(CHECKPOINT_FILE);
    fs::rename(&tmp, &blob).map_err(|e| LabError::io(&blob, e))?;
    let meta_path = dir.join(META_FILE);
    let tmp = dir.join(format!("{META_FILE}.tmp"));
    fs::write(&tmp, serde_json::to_string_pretty(meta)?).map_err(|e| LabError::io(&tmp, e))?;
    fs::rename(&tmp, &meta_path).map_err(|e| LabError::io(&meta_path, e))?;
    Ok(())
}

pub fn read_meta(dir: &Path) -> Result<CheckpointMeta> {
    let path = dir.join(META_FILE);
    let text = fs::read_to_string(&path).map_err(|e| LabError::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub(crate) fn load_tensors(dir: &Path, model: &Monet, opt: &mut Optimizer, steps: u64) -> Result<()> {
    let path = dir.join(CHECKPOINT_FILE);
    let tensors = candle_core::safetensors::load(&path, &Device::Cpu)?;
    for (i, (name, var)) in model.params().named().iter().enumerate() {
        let key = format!("param.{name}");
        let t = tensors.get(&key).ok_or_else(|| LabError::Data {
            index: i,
            message: format!("checkpoint lacks {key}"),
        })?;
        if t.dims() != var.dims() {
            return Err(LabError::Shape(format!("{key}: {:?} vs {:?}", t.dims(), var.dims())));
        }
        var.set(&t.to_dtype(var.dtype())?)?;
    }
    opt.load_state(&tensors, steps)
}

/// Load only the parameters from a checkpoint into `model`.
pub fn load_params(dir: &Path, model: &Monet) -> Result<()> {
    let path = dir.join(CHECKPOINT_FILE);
    let tensors = candle_core::safetensors::load(&path, &Device::Cpu)?;
    for (name, var) in model.params().named() {
        let key = format!("param.{name}");
        let t = tensors
            .get(&key)
            .ok_or_else(|| LabError::Data { index: 0, message: format!("checkpoint lacks {key}") })?;
        var.set(&t.to_dtype(var.dtype())?)?;
    }
    Ok(())
}
