use std::fmt;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{build_inventory, load_utterance, save_utterance, synth_utterance, PhoneInventory, RenderConfig, Utterance};
use crate::error::{Error, IoContext, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Pretrain,
    Labeled,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Pretrain, Split::Labeled, Split::Validation, Split::Test];
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Split::Pretrain => "pretrain",
            Split::Labeled => "labeled",
            Split::Validation => "validation",
            Split::Test => "test",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCounts {
    pub pretrain: usize,
    pub labeled: usize,
    #[serde(default)]
    pub validation: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Pretrain => self.pretrain,
            Split::Labeled => self.labeled,
            Split::Validation => self.validation,
            Split::Test => self.test,
        }
    }

    pub fn total(&self) -> usize {
        Split::ALL.iter().map(|&s| self.get(s)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub n_phones: usize,
    pub n_visemes: usize,
    pub n_words: usize,
    pub n_speakers: u32,
    /// Inclusive range of words per utterance.
    pub words_per_utterance: (usize, usize),
    pub splits: SplitCounts,
    #[serde(default)]
    pub render: RenderConfig,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_phones: 12,
            n_visemes: 8,
            n_words: 40,
            n_speakers: 8,
            words_per_utterance: (2, 4),
            splits: SplitCounts {
                pretrain: 200,
                labeled: 40,
                validation: 20,
                test: 40,
            },
            render: RenderConfig::default(),
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.words_per_utterance;
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!("words_per_utterance must satisfy 1 <= min <= max, got ({lo}, {hi})")));
        }
        if self.n_speakers == 0 {
            return Err(Error::Config("n_speakers must be positive".into()));
        }
        if self.splits.total() == 0 {
            return Err(Error::Config("corpus has no utterances".into()));
        }
        let r = &self.render;
        if r.image_size == 0 || r.image_size > u16::MAX as usize {
            return Err(Error::Config(format!("image_size {} out of range", r.image_size)));
        }
        if !(r.audio_noise >= 0.0 && r.pixel_noise >= 0.0 && r.formant_amplitude.is_finite()) {
            return Err(Error::Config("noise levels must be non-negative".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    /// Relative to the corpus directory.
    pub path: String,
    pub split: Split,
    #[serde(rename = "T")]
    pub t: usize,
    pub speaker: u32,
    pub words: Vec<u16>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub seed: u64,
    pub config_hash: String,
    pub records: Vec<ManifestRecord>,
}

impl CorpusManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const INVENTORY_FILE: &str = "inventory.json";
pub const CONFIG_FILE: &str = "corpus.json";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).at(path)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).at(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Generates the corpus into `out_dir`: one AVU1 file per utterance under
/// `utt/`, plus the manifest, inventory and config as JSON.
pub fn gen_corpus(cfg: &CorpusConfig, seed: u64, out_dir: &Path) -> Result<CorpusManifest> {
    cfg.validate()?;
    let inv = build_inventory(cfg.n_phones, cfg.n_visemes, cfg.n_words, seed::substream(seed, "inventory"))?;
    let utt_dir = out_dir.join("utt");
    std::fs::create_dir_all(&utt_dir).at(&utt_dir)?;

    let mut records = Vec::with_capacity(cfg.splits.total());
    let mut index = 0u64;
    for split in Split::ALL {
        for _ in 0..cfg.splits.get(split) {
            let mut rng = seed::rng(seed::substream_idx(seed, "utterance-plan", index));
            let n = rng.random_range(cfg.words_per_utterance.0..=cfg.words_per_utterance.1);
            let words: Vec<u16> = (0..n).map(|_| rng.random_range(0..cfg.n_words as u16)).collect();
            let speaker = rng.random_range(0..cfg.n_speakers);
            let u = synth_utterance(&inv, &words, speaker, &cfg.render, seed::substream_idx(seed, "utterance", index))?;
            let rel = format!("utt/{index:06}.avu");
            save_utterance(&out_dir.join(&rel), &u)?;
            records.push(ManifestRecord {
                path: rel,
                split,
                t: u.num_frames(),
                speaker,
                words,
            });
            index += 1;
        }
    }
    let manifest = CorpusManifest {
        seed,
        config_hash: cfg.hash(),
        records,
    };
    write_json(&out_dir.join(MANIFEST_FILE), &manifest)?;
    write_json(&out_dir.join(INVENTORY_FILE), &inv)?;
    write_json(&out_dir.join(CONFIG_FILE), cfg)?;
    Ok(manifest)
}

/// A generated corpus on disk.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub dir: PathBuf,
    pub manifest: CorpusManifest,
    pub inventory: PhoneInventory,
    pub config: CorpusConfig,
}

/// Opens a corpus directory, checking that every manifest path exists.
pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let manifest: CorpusManifest = read_json(&dir.join(MANIFEST_FILE))?;
    let inventory: PhoneInventory = read_json(&dir.join(INVENTORY_FILE))?;
    let config: CorpusConfig = read_json(&dir.join(CONFIG_FILE))?;
    let missing: Vec<PathBuf> = manifest
        .records
        .iter()
        .map(|r| dir.join(&r.path))
        .filter(|p| !p.is_file())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Missing(missing));
    }
    Ok(Corpus {
        dir: dir.to_path_buf(),
        manifest,
        inventory,
        config,
    })
}

impl Corpus {
    pub fn load(&self, record: &ManifestRecord) -> Result<Utterance> {
        let u = load_utterance(&self.dir.join(&record.path))?;
        if u.num_frames() != record.t || u.word_seq != record.words {
            return Err(Error::Format(format!("{} disagrees with its manifest record", record.path)));
        }
        Ok(u)
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<Utterance>> {
        self.manifest.split(split).map(|r| self.load(r)).collect()
    }
}
