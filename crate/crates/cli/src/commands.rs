//! Stage implementations behind the subcommands.

use std::path::{Path, PathBuf};

use avhubert::clusterlab::{save_codebook, save_targets, TargetSource};
use avhubert::decode::report::DecodeRecord;
use avhubert::model::{load_model, save_model, AvHubert, CheckpointHeader, Fusion, ModelConfig};
use avhubert::synthcorpus::{gen_corpus as generate, load_corpus, Corpus, CorpusManifest, Split};
use avhubert::trainer::{
    self, cluster_items, evaluate, iterative_pretrain, load_split, model_features, target_quality, write_loss_curve,
    Prepared, RunRecord, TargetKind, Trained,
};
use avhubert::{seed, Error, Result};
use avhubert_neural::Real;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::{HandFeature, StreamArg};

pub const CLUSTER_FILE: &str = "cluster.json";
pub const FINETUNE_FILE: &str = "finetune.json";

pub fn gen_corpus(cfg: &ExperimentConfig, out: &Path) -> Result<CorpusManifest> {
    generate(&cfg.corpus, cfg.seed, out)
}

/// Opens the corpus and checks it was generated from the configured corpus
/// section.
pub fn open_corpus(cfg: &ExperimentConfig, dir: &Path) -> Result<Corpus> {
    let corpus = load_corpus(dir)?;
    if corpus.manifest.config_hash != cfg.corpus.hash() {
        return Err(Error::Config(format!(
            "corpus at {} was generated from a different corpus section than the configuration",
            dir.display()
        )));
    }
    Ok(corpus)
}

pub fn pretrain<F: Real>(cfg: &ExperimentConfig, corpus: &Corpus, out: &Path) -> Result<RunRecord> {
    let plan = cfg.plan().map_err(|e| Error::Config(e.to_string()))?;
    iterative_pretrain::<F>(corpus, &cfg.model, &plan, cfg.pretrain.variant, &cfg.kmeans, cfg.seed, out)
}

/// What `cluster-eval` clusters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClusterRequest {
    pub hand: Option<HandFeature>,
    pub layer: Option<usize>,
    pub k: Option<usize>,
    pub stream: Option<StreamArg>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub source: TargetSource,
    pub checkpoint: Option<PathBuf>,
    pub fusion: Option<Fusion>,
    pub k: usize,
    pub frames: usize,
    pub purity: f64,
    pub nmi: f64,
}

/// The streams a checkpoint's modality dropout exposed it to.
pub fn trained_fusion(c: &ModelConfig) -> Fusion {
    match (c.p_m, c.p_a) {
        (m, a) if m == 0.0 && a == 0.0 => Fusion::VisualOnly,
        (m, a) if m == 0.0 && a == 1.0 => Fusion::AudioOnly,
        _ => Fusion::Both,
    }
}

fn header_usize(h: &CheckpointHeader, key: &str) -> Option<usize> {
    h.info.get(key).and_then(|v| v.as_u64()).map(|v| v as usize)
}

/// Clusters features of the pretrain and validation splits and scores the
/// targets. Hand features use iteration 0's cluster seed and model features
/// the seed of the iteration after the checkpoint's, so the results match
/// the targets a pretraining run with the same seed derives.
pub fn cluster_eval<F: Real>(cfg: &ExperimentConfig, corpus: &Corpus, req: &ClusterRequest, out: &Path) -> Result<ClusterSummary> {
    let (features, items, source, fusion, default_k) = match &cfg.paths.checkpoint {
        None => {
            let kind = match req.hand {
                Some(HandFeature::Mfcc) => TargetKind::Mfcc,
                Some(HandFeature::Hog) => TargetKind::Hog,
                None => cfg.pretrain.variant.init,
            };
            let (mut items, mut feats) = load_split(corpus, Split::Pretrain, Some(kind))?;
            let (vi, vf) = load_split(corpus, Split::Validation, Some(kind))?;
            items.extend(vi);
            feats.extend(vf);
            let name = if kind == TargetKind::Hog { "hog" } else { "mfcc39" };
            let source = TargetSource {
                feature_kind: name.into(),
                iteration: 0,
                layer: None,
            };
            (feats, items, source, None, cfg.pretrain.k_schedule[0])
        }
        Some(path) => {
            let (model, header) = load_model::<F>(path)?;
            let layers = model.config.layers;
            let layer = req.layer.unwrap_or((3 * layers).div_ceil(4));
            if layer == 0 || layer > layers {
                return Err(Error::Config(format!("layer {layer} not in 1..={layers}")));
            }
            let fusion = match req.stream {
                Some(StreamArg::Av) => Fusion::Both,
                Some(StreamArg::V) => Fusion::VisualOnly,
                Some(StreamArg::A) => Fusion::AudioOnly,
                None => trained_fusion(&model.config),
            };
            let iteration = header_usize(&header, "iteration").unwrap_or(0);
            let (mut items, _) = load_split(corpus, Split::Pretrain, None)?;
            items.extend(load_split(corpus, Split::Validation, None)?.0);
            let refs: Vec<&Prepared> = items.iter().collect();
            let feats = model_features(&model, &refs, layer, fusion)?;
            let source = TargetSource {
                feature_kind: "model-layer".into(),
                iteration,
                layer: Some(layer),
            };
            let k = cfg.pretrain.k_schedule.get(iteration).copied().unwrap_or(cfg.pretrain.k_schedule[0]);
            (feats, items, source, Some(fusion), k)
        }
    };
    let k = req.k.unwrap_or(default_k);
    let refs: Vec<&Prepared> = items.iter().collect();
    let frames = refs.iter().map(|p| p.frames()).sum();
    if k < 2 || k > frames {
        return Err(Error::Config(format!("K = {k} must be in 2..={frames}")));
    }
    let cluster_seed = seed::substream_idx(cfg.seed, "cluster", source.iteration as u64 + 1);
    let (targets, codebook) = cluster_items(&refs, &features, k, &cfg.kmeans, cluster_seed, source.clone())?;
    let (purity, nmi) = target_quality(&refs, &targets)?;
    std::fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    save_codebook(&out.join("codebook.avk"), &codebook)?;
    save_targets(&out.join("targets.avt"), &targets)?;
    let summary = ClusterSummary {
        source,
        checkpoint: cfg.paths.checkpoint.clone(),
        fusion,
        k,
        frames,
        purity,
        nmi,
    };
    write_json(&out.join(CLUSTER_FILE), &serde_json::json!({ "request": req, "summary": summary }))?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneSummary {
    pub init: Option<PathBuf>,
    /// Pretraining run directory name and iteration of `init`.
    pub run: Option<String>,
    pub iteration: Option<usize>,
    pub labeler: Option<PathBuf>,
    pub utterances: usize,
    pub steps: usize,
    pub skipped: usize,
    pub best_step: Option<usize>,
    pub best_score: Option<f64>,
}

fn run_of(path: &Path) -> Option<String> {
    let iter_dir = path.parent()?;
    if !iter_dir.file_name()?.to_str()?.starts_with("iter") {
        return None;
    }
    Some(iter_dir.parent()?.file_name()?.to_string_lossy().into_owned())
}

pub fn finetune<F: Real>(cfg: &ExperimentConfig, corpus: &Corpus, out: &Path) -> Result<FinetuneSummary> {
    let (labeled, _) = load_split(corpus, Split::Labeled, None)?;
    let (val, _) = load_split(corpus, Split::Validation, None)?;
    let vocab = corpus.inventory.n_phones();
    let ft = &cfg.finetune;
    let (init, run, iteration) = match &cfg.paths.checkpoint {
        Some(p) => {
            let (m, h) = load_model::<F>(p)?;
            (Some(m), run_of(p), header_usize(&h, "iteration"))
        }
        None => (None, None, None),
    };
    let mut utterances = labeled.len();
    // self-training is fine-tuning on pseudo-labeled pretrain utterances plus the labeled split
    let trained: Trained<F> = match (&cfg.paths.labeler, init) {
        (Some(lp), Some(pretrained)) => {
            let (labeler, _) = load_model::<F>(lp)?;
            let (unlabeled, _) = load_split(corpus, Split::Pretrain, None)?;
            let mut union = trainer::pseudo_label(&labeler, cfg.self_training.labeler_mode, &unlabeled)?;
            union.extend(labeled.iter().cloned());
            utterances = union.len();
            let base = pretrained.config.clone();
            trainer::finetune(Some(pretrained), &base, &union, &val, vocab, ft, cfg.seed)?
        }
        (Some(_), None) => return Err(Error::Config("self-training starts from a pretrained checkpoint".into())),
        (None, init) => trainer::finetune(init, &cfg.model, &labeled, &val, vocab, ft, cfg.seed)?,
    };
    std::fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    let info = |role: &str| serde_json::json!({"role": role, "run": run, "iteration": iteration, "seed": cfg.seed});
    save_model(&out.join("checkpoint.avp"), &trained.model, info("finetuned"))?;
    save_model(&out.join("best.avp"), &trained.best, info("finetuned-best"))?;
    write_loss_curve(&out.join("loss.csv"), &trained.log)?;
    let summary = FinetuneSummary {
        init: cfg.paths.checkpoint.clone(),
        run,
        iteration,
        labeler: cfg.paths.labeler.clone(),
        utterances,
        steps: ft.train.steps,
        skipped: trained.log.skipped,
        best_step: trained.log.best.map(|b| b.0),
        best_score: trained.log.best.map(|b| b.1),
    };
    write_json(&out.join(FINETUNE_FILE), &summary)?;
    Ok(summary)
}

/// Scores a fine-tuned checkpoint on the test split and writes a decode
/// record.
pub fn decode<F: Real>(cfg: &ExperimentConfig, corpus: &Corpus, checkpoint: &Path, out: &Path) -> Result<DecodeRecord> {
    let (model, header): (AvHubert<F>, _) = load_model(checkpoint)?;
    let (test, _) = load_split(corpus, Split::Test, None)?;
    let beam = (cfg.decode.beam > 0).then_some(cfg.decode.beam);
    let mode = cfg.finetune.mode;
    let eval = evaluate(&model, &test, mode, &corpus.inventory.words, beam)?;
    let record = DecodeRecord {
        run: header.info.get("run").and_then(|v| v.as_str()).map(String::from),
        iteration: header_usize(&header, "iteration"),
        mode,
        wer: eval.wer,
        utterances: eval.utterances,
    };
    std::fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    record.save(out)?;
    Ok(record)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}
