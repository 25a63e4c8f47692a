use std::path::Path;

use avhubert_neural::{decode_checkpoint, encode_checkpoint, AdamConfig, AdamState, Checkpoint, Real};
use serde::{Deserialize, Serialize};

use super::{AvHubert, ModelConfig};
use crate::error::{Error, IoContext, Result};

/// JSON header stored in every model checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    /// Free-form provenance: run seed, iteration, step.
    #[serde(default)]
    pub info: serde_json::Value,
}

pub fn model_to_checkpoint<F: Real>(
    model: &AvHubert<F>,
    optimizer: Option<(AdamConfig, AdamState<F>)>,
    info: serde_json::Value,
) -> Result<Checkpoint> {
    let header = serde_json::to_string(&CheckpointHeader {
        model: model.config.clone(),
        info,
    })?;
    let optimizer = optimizer.map(|(c, s)| {
        let cast = |b: &Vec<Vec<F>>| b.iter().map(|v| v.iter().map(|x| x.as_f32()).collect()).collect();
        (
            c,
            AdamState {
                m: cast(&s.m),
                v: cast(&s.v),
                step: s.step,
            },
        )
    });
    Ok(Checkpoint {
        header,
        params: model.params.cast(),
        optimizer,
    })
}

/// Rebuilds a model from a checkpoint, requiring every parameter of the
/// configured architecture to be present with the right shape.
pub fn model_from_checkpoint<F: Real>(ckpt: &Checkpoint) -> Result<(AvHubert<F>, CheckpointHeader)> {
    let header: CheckpointHeader = serde_json::from_str(&ckpt.header)
        .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    let mut model = AvHubert::<F>::new(header.model.clone(), 0)?;
    let src = ckpt.params.cast::<F>();
    let copied = model.params.load_matching(&src);
    if copied.len() != model.params.len() || src.len() != model.params.len() {
        let missing: Vec<&str> = model
            .params
            .iter()
            .map(|(_, n, _)| n)
            .filter(|n| !copied.iter().any(|c| c == n))
            .collect();
        return Err(Error::Format(format!(
            "checkpoint does not match its architecture: {} of {} parameters loaded, missing or misshapen {missing:?}",
            copied.len(),
            model.params.len()
        )));
    }
    Ok((model, header))
}

pub fn save_model<F: Real>(path: &Path, model: &AvHubert<F>, info: serde_json::Value) -> Result<()> {
    let bytes = encode_checkpoint(&model_to_checkpoint(model, None, info)?)?;
    std::fs::write(path, bytes).at(path)
}

pub fn load_model<F: Real>(path: &Path) -> Result<(AvHubert<F>, CheckpointHeader)> {
    let bytes = std::fs::read(path).at(path)?;
    model_from_checkpoint(&decode_checkpoint(&bytes)?)
}
