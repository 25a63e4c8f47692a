//! Experiment configuration: one JSON document covering every stage.

use std::path::{Path, PathBuf};

use avhubert::clusterlab::KmeansConfig;
use avhubert::model::ModelConfig;
use avhubert::synthcorpus::CorpusConfig;
use avhubert::trainer::{
    FinetuneConfig, InputMode, IterationPlan, IterationSpec, MaskingConfig, Placement, TargetKind, TrainConfig,
    Variant, DEFAULT_K_SCHEDULE,
};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// File name of the effective configuration written into output directories.
pub const EFFECTIVE_CONFIG: &str = "experiment.json";

/// A configuration problem: the offending field path and what is wrong.
#[derive(Debug, thiserror::Error)]
#[error("invalid config{}: {message}", location(.field, .line, .column))]
pub struct ConfigError {
    pub field: Option<String>,
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

fn location(field: &Option<String>, line: &Option<usize>, column: &Option<usize>) -> String {
    let mut s = String::new();
    if let Some(f) = field.as_deref().filter(|f| !f.is_empty() && *f != ".") {
        s.push_str(&format!(" at `{f}`"));
    }
    if let (Some(l), Some(c)) = (line, column) {
        s.push_str(&format!(" (line {l}, column {c})"));
    }
    s
}

impl ConfigError {
    pub fn field(field: &str, message: impl Into<String>) -> Self {
        Self {
            field: Some(field.into()),
            line: None,
            column: None,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainSection {
    pub variant: Variant,
    pub iterations: usize,
    pub k_schedule: Vec<usize>,
    /// Layer clustered for iterations 2 onward; empty selects
    /// `ceil(3L/4)` for iteration 2 and `L` afterwards.
    pub cluster_layers: Vec<usize>,
    /// First iteration that masks the input streams instead of the fused
    /// features.
    pub input_level_from: usize,
    /// Per-iteration update counts; empty uses `train.steps` everywhere.
    pub iteration_steps: Vec<usize>,
    pub train: TrainConfig,
}

impl Default for PretrainSection {
    fn default() -> Self {
        Self {
            variant: "AV/MFCC->AV".parse().expect("valid variant"),
            iterations: 2,
            k_schedule: DEFAULT_K_SCHEDULE.to_vec(),
            cluster_layers: Vec::new(),
            input_level_from: 5,
            iteration_steps: Vec::new(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelfTrainSection {
    /// Input streams the pseudo-labeling model decodes from.
    pub labeler_mode: InputMode,
}

impl Default for SelfTrainSection {
    fn default() -> Self {
        Self {
            labeler_mode: InputMode::AudioOnly,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeSection {
    /// Beam width; 0 decodes greedily.
    pub beam: usize,
}

impl Default for DecodeSection {
    fn default() -> Self {
        Self { beam: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Corpus directory read by every stage after generation.
    pub corpus: Option<PathBuf>,
    /// Checkpoint a fine-tune starts from, a cluster evaluation reads, or a
    /// decode scores.
    pub checkpoint: Option<PathBuf>,
    /// Fine-tuned checkpoint producing pseudo-labels for self-training.
    pub labeler: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub model: ModelConfig,
    pub masking: MaskingConfig,
    pub pretrain: PretrainSection,
    pub kmeans: KmeansConfig,
    pub finetune: FinetuneConfig,
    pub self_training: SelfTrainSection,
    pub decode: DecodeSection,
    pub paths: Paths,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            corpus: CorpusConfig::default(),
            model: ModelConfig::default(),
            masking: MaskingConfig::default(),
            pretrain: PretrainSection::default(),
            kmeans: KmeansConfig::default(),
            finetune: FinetuneConfig::default(),
            self_training: SelfTrainSection::default(),
            decode: DecodeSection::default(),
            paths: Paths::default(),
        }
    }
}

/// Named presets, one per pretraining variant.
pub const PRESETS: [(&str, &str); 6] = [
    ("AV/MFCC->AV", include_str!("../presets/av-mfcc-av.json")),
    ("V/MFCC->V", include_str!("../presets/v-mfcc-v.json")),
    ("V/HoG->V", include_str!("../presets/v-hog-v.json")),
    ("AV/MFCC->A", include_str!("../presets/av-mfcc-a.json")),
    ("V/MFCC->A", include_str!("../presets/v-mfcc-a.json")),
    ("audio-only", include_str!("../presets/audio-only.json")),
];

fn parse_json(text: &str, origin: &str) -> Result<Value, ConfigError> {
    serde_json::from_str(text).map_err(|e| ConfigError {
        field: None,
        line: Some(e.line()),
        column: Some(e.column()),
        message: format!("{origin}: {e}"),
    })
}

/// JSON of the preset `name`, matched case-insensitively with `→` read as
/// `->`.
pub fn preset(name: &str) -> Result<Value, ConfigError> {
    let norm = name.trim().replace('→', "->").to_ascii_lowercase();
    let (key, text) = PRESETS
        .iter()
        .find(|(k, _)| k.to_ascii_lowercase() == norm)
        .ok_or_else(|| {
            let names: Vec<&str> = PRESETS.iter().map(|(k, _)| *k).collect();
            ConfigError::field("--variant", format!("unknown preset {name:?}; known presets: {}", names.join(", ")))
        })?;
    parse_json(text, &format!("preset {key}"))
}

/// Recursively overlays `top` on `base`; objects merge, anything else is
/// replaced.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, t) => *b = t,
    }
}

impl ExperimentConfig {
    /// Parses and validates a configuration document.
    pub fn from_value(value: Value, source_text: Option<&str>) -> Result<Self, ConfigError> {
        let cfg: Self = serde_path_to_error::deserialize(value).map_err(|e| {
            let field = e.path().to_string();
            let message = e.into_inner().to_string();
            let key = unknown_key(&message).unwrap_or_else(|| field.rsplit('.').next().unwrap_or("").split('[').next().unwrap_or("").to_string());
            let (line, column) = source_text.and_then(|t| locate(t, &key)).unzip();
            ConfigError {
                field: Some(field),
                line,
                column,
                message,
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (if any), overlays `preset` and the seed override.
    pub fn load(path: Option<&Path>, preset_name: Option<&str>, seed: Option<u64>) -> Result<Self, ConfigError> {
        let mut value = Value::Object(Default::default());
        let mut text = None;
        if let Some(p) = path {
            let t = std::fs::read_to_string(p).map_err(|e| ConfigError {
                field: None,
                line: None,
                column: None,
                message: format!("cannot read {}: {e}", p.display()),
            })?;
            value = parse_json(&t, &p.display().to_string())?;
            if !value.is_object() {
                return Err(ConfigError::field(".", "top level must be a JSON object"));
            }
            text = Some(t);
        }
        if let Some(name) = preset_name {
            merge(&mut value, preset(name)?);
        }
        if let Some(s) = seed {
            merge(&mut value, serde_json::json!({ "seed": s }));
        }
        Self::from_value(value, text.as_deref())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let wrap = |field: &'static str| move |e: avhubert::Error| ConfigError::field(field, e.to_string());
        self.corpus.validate().map_err(wrap("corpus"))?;
        self.model.validate().map_err(wrap("model"))?;
        self.masking.validate().map_err(wrap("masking"))?;
        self.finetune.validate().map_err(wrap("finetune"))?;
        let p = &self.pretrain;
        if p.iterations == 0 {
            return Err(ConfigError::field("pretrain.iterations", "must be at least 1"));
        }
        if p.k_schedule.len() < p.iterations {
            return Err(ConfigError::field(
                "pretrain.k_schedule",
                format!("{} entries for {} iterations", p.k_schedule.len(), p.iterations),
            ));
        }
        if !p.cluster_layers.is_empty() && p.cluster_layers.len() != p.iterations - 1 {
            return Err(ConfigError::field(
                "pretrain.cluster_layers",
                format!("needs one layer per iteration after the first ({}), got {}", p.iterations - 1, p.cluster_layers.len()),
            ));
        }
        if let Some(i) = p.cluster_layers.iter().position(|&l| l == 0 || l > self.model.layers) {
            return Err(ConfigError::field(
                &format!("pretrain.cluster_layers[{i}]"),
                format!("layer {} not in 1..={}", p.cluster_layers[i], self.model.layers),
            ));
        }
        if !p.iteration_steps.is_empty() && p.iteration_steps.len() != p.iterations {
            return Err(ConfigError::field(
                "pretrain.iteration_steps",
                format!("{} entries for {} iterations", p.iteration_steps.len(), p.iterations),
            ));
        }
        if p.input_level_from == 0 {
            return Err(ConfigError::field("pretrain.input_level_from", "iterations are numbered from 1"));
        }
        let max_k = p.k_schedule[..p.iterations].iter().max().copied().unwrap_or(0);
        let min_frames = self.min_cluster_frames();
        if max_k > min_frames {
            return Err(ConfigError::field(
                "pretrain.k_schedule",
                format!("K = {max_k} exceeds the {min_frames} frames guaranteed in the pretrain and validation splits"),
            ));
        }
        self.plan()?;
        if self.model.image_height != self.corpus.render.image_size || self.model.image_width != self.corpus.render.image_size {
            return Err(ConfigError::field(
                "model.image_height",
                format!(
                    "model images are {}x{} but the corpus renders {}x{}",
                    self.model.image_height, self.model.image_width, self.corpus.render.image_size, self.corpus.render.image_size
                ),
            ));
        }
        Ok(())
    }

    /// Lower bound on the video frames available for clustering: every
    /// utterance has at least one word of at least one phone lasting at
    /// least two frames.
    pub fn min_cluster_frames(&self) -> usize {
        let utts = self.corpus.splits.pretrain + self.corpus.splits.validation;
        utts * self.corpus.words_per_utterance.0 * 2
    }

    /// The iteration plan described by the pretraining and masking sections.
    pub fn plan(&self) -> Result<IterationPlan, ConfigError> {
        let p = &self.pretrain;
        let layers = self.model.layers;
        let iterations = (0..p.iterations)
            .map(|i| {
                let n = i + 1;
                let mut masking = self.masking.clone();
                if n >= p.input_level_from {
                    masking.placement = Placement::Input;
                }
                let mut train = p.train.clone();
                if let Some(&s) = p.iteration_steps.get(i) {
                    train.steps = s;
                }
                IterationSpec {
                    source: if i == 0 { p.variant.init } else { TargetKind::ModelLayer },
                    k: p.k_schedule[i],
                    layer: match i {
                        0 => None,
                        _ if !p.cluster_layers.is_empty() => Some(p.cluster_layers[i - 1]),
                        1 => Some((3 * layers).div_ceil(4)),
                        _ => Some(layers),
                    },
                    masking,
                    train,
                }
            })
            .collect();
        let plan = IterationPlan { iterations };
        plan.validate(layers).map_err(|e| ConfigError::field("pretrain", e.to_string()))?;
        Ok(plan)
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(EFFECTIVE_CONFIG);
        std::fs::write(&path, serde_json::to_string_pretty(self).expect("config serializes"))?;
        Ok(path)
    }
}

fn unknown_key(message: &str) -> Option<String> {
    let rest = message.strip_prefix("unknown field `")?;
    Some(rest[..rest.find('`')?].to_string())
}

/// Best-effort line and column of the first occurrence of `key` in `text`.
fn locate(text: &str, key: &str) -> Option<(usize, usize)> {
    if key.is_empty() || key == "?" {
        return None;
    }
    let needle = format!("\"{key}\"");
    text.lines()
        .enumerate()
        .find_map(|(i, l)| l.find(&needle).map(|c| (i + 1, c + 1)))
}
