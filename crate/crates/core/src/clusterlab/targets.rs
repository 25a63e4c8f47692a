use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::kmeans::{assign, kmeans_fit, Codebook, KmeansConfig};
use crate::bytes::Reader;
use crate::error::{Error, IoContext, Result};
use crate::features::{align_labels_25hz, FeatureSequence, Standardizer};
use crate::seed;

/// Where a set of targets came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetSource {
    pub feature_kind: String,
    /// Model iteration whose features were clustered; 0 for hand features.
    pub iteration: usize,
    pub layer: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterTargets {
    pub k: usize,
    pub source: TargetSource,
    /// Per utterance: id and one target per video frame.
    pub utterances: Vec<(u32, Vec<u16>)>,
}

impl ClusterTargets {
    pub fn flat(&self) -> Vec<u16> {
        self.utterances.iter().flat_map(|(_, z)| z.iter().copied()).collect()
    }
}

/// Clusters per-utterance features into `k` units and assigns every frame.
///
/// Features are standardized over the whole set first. 100 Hz input is
/// assigned at 100 Hz and then reduced to 25 Hz by 4-frame majority vote.
/// Fitting uses at most `cfg.fit_cap` randomly drawn frames.
pub fn make_targets(
    features: &[FeatureSequence],
    k: usize,
    cfg: &KmeansConfig,
    seed: u64,
    source: TargetSource,
) -> Result<(ClusterTargets, Codebook)> {
    let first = features
        .first()
        .ok_or_else(|| Error::Param("no features to cluster".into()))?;
    let (dim, rate) = (first.dim(), first.rate);
    if let Some(bad) = features.iter().find(|f| f.dim() != dim || f.rate != rate) {
        return Err(Error::Param(format!(
            "mixed feature shapes: {}@{} vs {dim}@{rate}",
            bad.dim(),
            bad.rate
        )));
    }
    let norm = Standardizer::fit(features)?;
    let normed: Vec<FeatureSequence> = features.iter().map(|f| norm.apply(f)).collect::<Result<_>>()?;
    let total: usize = normed.iter().map(FeatureSequence::frames).sum();

    let mut pool = Vec::with_capacity(total.min(cfg.fit_cap) * dim);
    if total > cfg.fit_cap {
        let mut rng = seed::rng(seed::substream(seed, "kmeans-subsample"));
        let mut picks = index::sample(&mut rng, total, cfg.fit_cap).into_vec();
        picks.sort_unstable();
        let all: Vec<&[f32]> = normed.iter().flat_map(|f| f.data().chunks_exact(dim)).collect();
        for i in picks {
            pool.extend_from_slice(all[i]);
        }
    } else {
        for f in &normed {
            pool.extend_from_slice(f.data());
        }
    }
    let mut codebook = kmeans_fit(&pool, dim, k, cfg.max_iter, cfg.n_restarts, seed)?;
    codebook.feature_kind = source.feature_kind.clone();

    let mut utterances = Vec::with_capacity(normed.len());
    for (i, f) in normed.iter().enumerate() {
        let z = assign(f.data(), dim, &codebook)?;
        let z = if rate == 100 { align_labels_25hz(&z) } else { z };
        utterances.push((i as u32, z));
    }
    Ok((ClusterTargets { k, source, utterances }, codebook))
}

const TARGETS_MAGIC: &[u8; 4] = b"AVT1";
const CODEBOOK_MAGIC: &[u8; 4] = b"AVK1";

/// AVT1: magic, K u32, then per utterance id u32, T u32 and T u16 targets
/// until the end of the file. The source description is not stored.
pub fn encode_targets(t: &ClusterTargets) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(TARGETS_MAGIC);
    out.extend_from_slice(&(t.k as u32).to_le_bytes());
    for (id, z) in &t.utterances {
        out.extend_from_slice(&id.to_le_bytes());
        out.extend_from_slice(&(z.len() as u32).to_le_bytes());
        for v in z {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_targets(bytes: &[u8], source: TargetSource) -> Result<ClusterTargets> {
    let mut r = Reader::new(bytes, "AVT1");
    r.magic(TARGETS_MAGIC)?;
    let k = r.u32()? as usize;
    if k == 0 || k > u16::MAX as usize + 1 {
        return Err(Error::Format(format!("AVT1: codebook size {k} out of range")));
    }
    let mut utterances = Vec::new();
    while !r.is_empty() {
        let id = r.u32()?;
        let t = r.u32()? as usize;
        let z = r.u16s(t)?;
        if let Some(bad) = z.iter().find(|&&v| v as usize >= k) {
            return Err(Error::Format(format!("AVT1: target {bad} >= K={k} in utterance {id}")));
        }
        utterances.push((id, z));
    }
    Ok(ClusterTargets { k, source, utterances })
}

/// AVK1: magic, K u32, D u32, then `K x D` f32 centroids.
pub fn encode_codebook(c: &Codebook) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * c.centroids.len());
    out.extend_from_slice(CODEBOOK_MAGIC);
    out.extend_from_slice(&(c.k as u32).to_le_bytes());
    out.extend_from_slice(&(c.dim as u32).to_le_bytes());
    for v in &c.centroids {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes centroids; kind, seed and inertia are not part of the file and
/// come back empty.
pub fn decode_codebook(bytes: &[u8]) -> Result<Codebook> {
    let mut r = Reader::new(bytes, "AVK1");
    r.magic(CODEBOOK_MAGIC)?;
    let k = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let centroids = r.f32s(k.checked_mul(dim).ok_or_else(|| r.overflow())?)?;
    r.finish()?;
    let c = Codebook {
        centroids,
        k,
        dim,
        feature_kind: String::new(),
        fit_seed: 0,
        inertia: 0.0,
    };
    c.validate().map_err(|e| Error::Format(format!("AVK1: {e}")))?;
    Ok(c)
}

pub fn save_targets(path: &Path, t: &ClusterTargets) -> Result<()> {
    std::fs::write(path, encode_targets(t)).at(path)
}

pub fn load_targets(path: &Path, source: TargetSource) -> Result<ClusterTargets> {
    decode_targets(&std::fs::read(path).at(path)?, source)
}

pub fn save_codebook(path: &Path, c: &Codebook) -> Result<()> {
    std::fs::write(path, encode_codebook(c)).at(path)
}

pub fn load_codebook(path: &Path) -> Result<Codebook> {
    decode_codebook(&std::fs::read(path).at(path)?)
}
