use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masking::VisualMode;
use crate::model::{Fusion, ModelConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub peak_lr: f64,
    pub warmup_fraction: f64,
    /// Upper bound on video frames per batch.
    pub frame_budget: usize,
    /// Validation interval in steps; the final step is always validated.
    pub val_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 400,
            peak_lr: 2e-3,
            warmup_fraction: 0.1,
            frame_budget: 1000,
            val_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return Err(Error::Config(format!("peak_lr {} must be positive", self.peak_lr)));
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return Err(Error::Config(format!("warmup_fraction {} not in (0, 1)", self.warmup_fraction)));
        }
        if self.frame_budget == 0 || self.val_every == 0 {
            return Err(Error::Config("frame_budget and val_every must be positive".into()));
        }
        Ok(())
    }
}

/// Span start probability and span length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpanConfig {
    pub p: f64,
    pub l: usize,
}

impl SpanConfig {
    fn validate(&self, name: &str) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) || self.l == 0 {
            return Err(Error::Config(format!("{name}: p {} must be in [0, 1] and l {} >= 1", self.p, self.l)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    /// Mask the fused features with a learned embedding.
    Feature,
    /// Mask each input stream separately.
    Input,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskingConfig {
    pub placement: Placement,
    pub feature: SpanConfig,
    pub audio: SpanConfig,
    pub video: SpanConfig,
    pub visual_mode: VisualMode,
    /// Draw imposter segments from the masked sequence itself rather than
    /// from another sequence of the batch.
    pub same_sequence: bool,
}

impl Default for MaskingConfig {
    fn default() -> Self {
        Self {
            placement: Placement::Feature,
            feature: SpanConfig { p: 0.08, l: 10 },
            audio: SpanConfig { p: 0.08, l: 10 },
            video: SpanConfig { p: 0.06, l: 5 },
            visual_mode: VisualMode::SubSeg,
            same_sequence: false,
        }
    }
}

impl MaskingConfig {
    pub fn validate(&self) -> Result<()> {
        self.feature.validate("feature masking")?;
        self.audio.validate("audio masking")?;
        self.video.validate("video masking")
    }

    pub fn input_level() -> Self {
        Self {
            placement: Placement::Input,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetKind {
    Mfcc,
    Hog,
    ModelLayer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IterationSpec {
    pub source: TargetKind,
    pub k: usize,
    /// Layer of the previous iteration's model that is clustered.
    #[serde(default)]
    pub layer: Option<usize>,
    #[serde(default)]
    pub masking: MaskingConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IterationPlan {
    pub iterations: Vec<IterationSpec>,
}

pub const DEFAULT_K_SCHEDULE: [usize; 5] = [20, 20, 30, 40, 50];

impl IterationPlan {
    /// The desk-scale schedule: clusters `{20, 20, 30, 40, 50}`, re-clustered
    /// layers `{ceil(3L/4), L, L, L}`, feature-level masking for the first
    /// four iterations and input-level masking for the fifth.
    pub fn desk(n_iterations: usize, first: TargetKind, layers: usize, train: &TrainConfig) -> Result<Self> {
        if n_iterations == 0 || n_iterations > DEFAULT_K_SCHEDULE.len() {
            return Err(Error::Config(format!("desk schedule covers 1 to 5 iterations, got {n_iterations}")));
        }
        let iterations = (0..n_iterations)
            .map(|i| IterationSpec {
                source: if i == 0 { first } else { TargetKind::ModelLayer },
                k: DEFAULT_K_SCHEDULE[i],
                layer: match i {
                    0 => None,
                    1 => Some((3 * layers).div_ceil(4)),
                    _ => Some(layers),
                },
                masking: if i < 4 { MaskingConfig::default() } else { MaskingConfig::input_level() },
                train: train.clone(),
            })
            .collect();
        Ok(Self { iterations })
    }

    pub fn validate(&self, model_layers: usize) -> Result<()> {
        let first = self
            .iterations
            .first()
            .ok_or_else(|| Error::Config("plan has no iterations".into()))?;
        if first.source == TargetKind::ModelLayer {
            return Err(Error::Config("iteration 1 must cluster MFCC or HoG features".into()));
        }
        for (i, it) in self.iterations.iter().enumerate() {
            let n = i + 1;
            it.masking.validate()?;
            it.train.validate()?;
            if it.k < 2 {
                return Err(Error::Config(format!("iteration {n}: k {} < 2", it.k)));
            }
            match (i, it.source, it.layer) {
                (0, _, None) => {}
                (0, _, Some(_)) => return Err(Error::Config("iteration 1 has no model layer to cluster".into())),
                (_, TargetKind::ModelLayer, Some(l)) if (1..=model_layers).contains(&l) => {}
                (_, TargetKind::ModelLayer, l) => {
                    return Err(Error::Config(format!(
                        "iteration {n}: layer {l:?} not in 1..={model_layers}"
                    )))
                }
                _ => return Err(Error::Config(format!("iteration {n} must cluster model features"))),
            }
        }
        for w in self.iterations.windows(2).skip(1) {
            if w[1].k < w[0].k {
                return Err(Error::Config(format!("k schedule decreases from {} to {}", w[0].k, w[1].k)));
            }
        }
        Ok(())
    }
}

/// Input streams a model sees during pretraining.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stream {
    #[serde(rename = "AV")]
    AudioVisual,
    #[serde(rename = "V")]
    Visual,
    #[serde(rename = "A")]
    Audio,
}

impl Stream {
    fn tag(self) -> &'static str {
        match self {
            Stream::AudioVisual => "AV",
            Stream::Visual => "V",
            Stream::Audio => "A",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "AV" => Stream::AudioVisual,
            "V" => Stream::Visual,
            "A" => Stream::Audio,
            _ => return None,
        })
    }

    /// Applies the stream's modality-dropout probabilities; audio-visual
    /// models keep those of `base`.
    pub fn configure(self, base: &ModelConfig) -> ModelConfig {
        let mut c = base.clone();
        match self {
            Stream::AudioVisual => {}
            Stream::Visual => (c.p_m, c.p_a) = (0.0, 0.0),
            Stream::Audio => (c.p_m, c.p_a) = (0.0, 1.0),
        }
        c
    }

    /// The fusion a model of this stream is evaluated with.
    pub fn fusion(self) -> Fusion {
        match self {
            Stream::AudioVisual => Fusion::Both,
            Stream::Visual => Fusion::VisualOnly,
            Stream::Audio => Fusion::AudioOnly,
        }
    }
}

/// A pretraining variant named `Model/init->sub`: the streams of the trained
/// model, the hand feature clustered first, and the streams of the model
/// whose features are clustered in later iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Variant {
    pub model: Stream,
    pub init: TargetKind,
    pub sub: Stream,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let init = if self.init == TargetKind::Hog { "HoG" } else { "MFCC" };
        write!(f, "{}/{init}->{}", self.model.tag(), self.sub.tag())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown variant {s:?}; expected Model/init->sub such as AV/MFCC->AV"));
        let norm = s.trim().replace('→', "->");
        let (model, rest) = norm.split_once('/').ok_or_else(bad)?;
        let (init, sub) = rest.split_once("->").ok_or_else(bad)?;
        let init = match init.to_ascii_lowercase().as_str() {
            "mfcc" => TargetKind::Mfcc,
            "hog" => TargetKind::Hog,
            _ => return Err(bad()),
        };
        Ok(Variant {
            model: Stream::parse(model).ok_or_else(bad)?,
            init,
            sub: Stream::parse(sub).ok_or_else(bad)?,
        })
    }
}

impl Serialize for Variant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Variant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputMode {
    VisualOnly,
    AudioOnly,
    #[serde(rename = "av")]
    AudioVisual,
}

impl InputMode {
    pub fn fusion(self) -> Fusion {
        match self {
            InputMode::VisualOnly => Fusion::VisualOnly,
            InputMode::AudioOnly => Fusion::AudioOnly,
            InputMode::AudioVisual => Fusion::Both,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub mode: InputMode,
    /// Percentage of updates during which only the CTC head is trained.
    pub freeze_percent: f64,
    pub train: TrainConfig,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            mode: InputMode::VisualOnly,
            freeze_percent: 10.0,
            train: TrainConfig {
                steps: 400,
                peak_lr: 1e-3,
                ..TrainConfig::default()
            },
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=100.0).contains(&self.freeze_percent) {
            return Err(Error::Config(format!("freeze_percent {} not in [0, 100]", self.freeze_percent)));
        }
        self.train.validate()
    }

    /// Number of leading updates with a frozen encoder.
    pub fn frozen_steps(&self) -> usize {
        (self.freeze_percent / 100.0 * self.train.steps as f64).round() as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variants_round_trip() {
        for name in ["AV/MFCC->AV", "V/MFCC->V", "V/HoG->V", "AV/MFCC->A", "V/MFCC->A", "A/MFCC->A"] {
            let v: Variant = name.parse().unwrap();
            assert_eq!(v.to_string(), name);
        }
        assert_eq!("AV/MFCC→AV".parse::<Variant>().unwrap().sub, Stream::AudioVisual);
        assert!("AV/LPC->AV".parse::<Variant>().is_err());
    }

    #[test]
    fn desk_plan_schedules() {
        let p = IterationPlan::desk(5, TargetKind::Mfcc, 3, &TrainConfig::default()).unwrap();
        let ks: Vec<usize> = p.iterations.iter().map(|i| i.k).collect();
        let layers: Vec<Option<usize>> = p.iterations.iter().map(|i| i.layer).collect();
        assert_eq!(ks, DEFAULT_K_SCHEDULE);
        assert_eq!(layers, vec![None, Some(3), Some(3), Some(3), Some(3)]);
        assert_eq!(p.iterations[4].masking.placement, Placement::Input);
        p.validate(3).unwrap();
        let p12 = IterationPlan::desk(2, TargetKind::Mfcc, 12, &TrainConfig::default()).unwrap();
        assert_eq!(p12.iterations[1].layer, Some(9));
    }

    #[test]
    fn plan_validation_catches_mistakes() {
        let mut p = IterationPlan::desk(3, TargetKind::Mfcc, 3, &TrainConfig::default()).unwrap();
        p.iterations[2].k = 10;
        assert!(p.validate(3).is_err());
        let mut p = IterationPlan::desk(2, TargetKind::Mfcc, 3, &TrainConfig::default()).unwrap();
        p.iterations[1].layer = Some(4);
        assert!(p.validate(3).is_err());
        p.iterations[0].source = TargetKind::ModelLayer;
        assert!(p.validate(3).is_err());
    }
}
