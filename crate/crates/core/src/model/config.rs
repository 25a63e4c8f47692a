use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    /// Probability of skipping a whole block during training.
    pub layer_drop: f64,
    /// Number of cluster classes predicted by the projection head.
    pub codebook_size: usize,
    /// Weight of unmasked frames in the masked-prediction loss.
    pub alpha: f64,
    /// Probability of keeping both modalities for a sequence.
    pub p_m: f64,
    /// Probability of keeping audio when only one modality is kept.
    pub p_a: f64,
    pub audio_dim: usize,
    pub image_height: usize,
    pub image_width: usize,
    pub visual_hidden: usize,
    pub conv_width: usize,
    /// Number of CTC output units, blank excluded.
    pub ctc_vocab: Option<usize>,
    pub positions: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            layers: 3,
            heads: 4,
            ffn_dim: 128,
            dropout: 0.1,
            layer_drop: 0.0,
            codebook_size: 20,
            alpha: 0.0,
            p_m: 0.5,
            p_a: 0.5,
            audio_dim: 104,
            image_height: 16,
            image_width: 16,
            visual_hidden: 64,
            conv_width: 5,
            ctc_vocab: None,
            positions: true,
        }
    }
}

fn prob(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Config(format!("{name} = {v} is not a probability")));
    }
    Ok(())
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim % 2 != 0 {
            return Err(Error::Config(format!("dim {} must be positive and even", self.dim)));
        }
        if self.heads == 0 || self.dim % self.heads != 0 {
            return Err(Error::Config(format!("dim {} not divisible by heads {}", self.dim, self.heads)));
        }
        if self.codebook_size < 2 {
            return Err(Error::Config(format!("codebook_size {} < 2", self.codebook_size)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha {} must be >= 0", self.alpha)));
        }
        prob("p_m", self.p_m)?;
        prob("p_a", self.p_a)?;
        prob("layer_drop", self.layer_drop)?;
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        if self.conv_width % 2 == 0 {
            return Err(Error::Config(format!("conv_width {} must be odd", self.conv_width)));
        }
        if self.ffn_dim == 0 || self.visual_hidden == 0 || self.audio_dim == 0 {
            return Err(Error::Config("ffn_dim, visual_hidden and audio_dim must be positive".into()));
        }
        if self.image_height * self.image_width == 0 {
            return Err(Error::Config("image size must be positive".into()));
        }
        if self.ctc_vocab == Some(0) {
            return Err(Error::Config("ctc_vocab must be positive".into()));
        }
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        self.image_height * self.image_width
    }

    pub fn half(&self) -> usize {
        self.dim / 2
    }
}
