use std::collections::BTreeMap;
use std::path::Path;

use avhubert_neural::{Graph, Real, Var};

use crate::clusterlab::{make_targets, nmi, purity, save_codebook, save_targets, ClusterTargets, KmeansConfig, TargetSource};
use crate::error::{Error, IoContext, Result};
use crate::features::FeatureSequence;
use crate::model::{extract_features_with, masked_loss, save_model, AvHubert, Fusion, Mode, ModelConfig, ModelInput};
use crate::seed;
use crate::synthcorpus::{Corpus, Split};

use super::config::{IterationPlan, MaskingConfig, TargetKind, TrainConfig, Variant};
use super::data::{load_split, pack, Prepared};
use super::masks::mask_batch;
use super::record::{write_loss_curve, IterationRecord, RunRecord, RUN_FILE};
use super::run::{train_loop, Trained};

fn target_map<'a>(targets: &'a ClusterTargets, items: &[Prepared]) -> Result<BTreeMap<u32, &'a [u16]>> {
    let map: BTreeMap<u32, &[u16]> = targets.utterances.iter().map(|(id, z)| (*id, z.as_slice())).collect();
    for p in items {
        match map.get(&p.id) {
            None => return Err(Error::Config(format!("no cluster targets for utterance {}", p.id))),
            Some(z) if z.len() != p.frames() => {
                return Err(Error::Config(format!(
                    "utterance {} has {} frames but {} targets",
                    p.id,
                    p.frames(),
                    z.len()
                )))
            }
            Some(_) => {}
        }
    }
    Ok(map)
}

/// Masked-prediction loss of a batch and its number of contributing frames.
fn batch_loss<F: Real>(
    m: &AvHubert<F>,
    g: &mut Graph<F>,
    items: &[&Prepared],
    targets: &BTreeMap<u32, &[u16]>,
    masking: &MaskingConfig,
    mode: Mode,
    seed: u64,
) -> Result<(Var, usize)> {
    let packed = pack(items.iter().map(|p| &p.input));
    let masks = mask_batch(&packed.lengths, &packed.video, m.config.pixels(), masking, seed::substream(seed, "mask"))?;
    let mut rng = seed::rng(seed::substream(seed, "modality"));
    let fusion: Vec<Fusion> = items.iter().map(|_| Fusion::sample(m.config.p_m, m.config.p_a, &mut rng)).collect();
    let z: Vec<usize> = items.iter().flat_map(|p| targets[&p.id].iter().map(|&v| v as usize)).collect();
    let input = ModelInput {
        lengths: &packed.lengths,
        audio: &packed.audio,
        video: masks.video.as_deref().unwrap_or(&packed.video),
        audio_mask: masks.audio_mask.as_deref(),
        video_mask: masks.video_mask.as_deref(),
        fused_mask: masks.fused_mask.as_deref(),
        fusion: &fusion,
    };
    let e = m.forward(g, &input, mode, None)?;
    let lp = m.predict_clusters(g, e)?;
    let n_masked = masks.masked.iter().filter(|&&f| f).count();
    let count = if m.config.alpha > 0.0 { masks.masked.len() } else { n_masked };
    Ok((masked_loss(g, lp, &z, &masks.masked, m.config.alpha)?, count))
}

/// Validation batches in corpus order, at most `budget` frames each.
pub(crate) fn fixed_batches(items: &[Prepared], budget: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    let mut frames = 0;
    for (i, p) in items.iter().enumerate() {
        if out.is_empty() || frames + p.frames() > budget {
            out.push(Vec::new());
            frames = 0;
        }
        out.last_mut().unwrap().push(i);
        frames += p.frames();
    }
    out
}

/// Mean masked-prediction loss over a held-out set with fixed masks and
/// fixed modality draws.
pub fn validation_loss<F: Real>(
    model: &AvHubert<F>,
    val: &[Prepared],
    targets: &ClusterTargets,
    masking: &MaskingConfig,
    budget: usize,
    seed: u64,
) -> Result<Option<f64>> {
    if val.is_empty() {
        return Ok(None);
    }
    let map = target_map(targets, val)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for (b, batch) in fixed_batches(val, budget).into_iter().enumerate() {
        let items: Vec<&Prepared> = batch.iter().map(|&i| &val[i]).collect();
        let mut g = Graph::new();
        let s = seed::substream_idx(seed, "validation", b as u64);
        match batch_loss(model, &mut g, &items, &map, masking, Mode::Eval, s) {
            Ok((l, n)) => {
                total += g.value(l).data()[0].as_f64() * n as f64;
                count += n;
            }
            Err(Error::Loss(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok((count > 0).then(|| total / count as f64))
}

/// One round of masked-prediction training against fixed cluster targets.
/// Every training and validation utterance must have targets.
pub fn pretrain_iteration<F: Real>(
    model: AvHubert<F>,
    train: &[Prepared],
    val: &[Prepared],
    targets: &ClusterTargets,
    masking: &MaskingConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Trained<F>> {
    if targets.k != model.config.codebook_size {
        return Err(Error::Config(format!(
            "targets have k = {} but the model predicts {} classes",
            targets.k, model.config.codebook_size
        )));
    }
    masking.validate()?;
    let map = target_map(targets, train)?;
    target_map(targets, val)?;
    let lengths = train.iter().map(Prepared::frames).collect();
    let val_seed = seed::substream(seed, "validation");
    train_loop(
        model,
        lengths,
        cfg,
        seed,
        0,
        |m, g, batch, s| {
            let items: Vec<&Prepared> = batch.iter().map(|&i| &train[i]).collect();
            batch_loss(m, g, &items, &map, masking, Mode::Train(s), s).map(|(l, _)| l)
        },
        |m| validation_loss(m, val, targets, masking, cfg.frame_budget, val_seed),
    )
}

/// Clusters `features` (one sequence per item of `items`) into `k` units and
/// keys the targets by utterance id.
pub fn cluster_items(
    items: &[&Prepared],
    features: &[FeatureSequence],
    k: usize,
    kmeans: &KmeansConfig,
    seed: u64,
    source: TargetSource,
) -> Result<(ClusterTargets, crate::clusterlab::Codebook)> {
    let (mut targets, codebook) = make_targets(features, k, kmeans, seed, source)?;
    for ((id, z), p) in targets.utterances.iter_mut().zip(items) {
        if z.len() != p.frames() {
            return Err(Error::Param(format!("utterance {} has {} frames but {} targets", p.id, p.frames(), z.len())));
        }
        *id = p.id;
    }
    Ok((targets, codebook))
}

/// Purity and NMI of targets against ground-truth frame phones.
pub fn target_quality(items: &[&Prepared], targets: &ClusterTargets) -> Result<(f64, f64)> {
    let z = targets.flat();
    let labels: Vec<u16> = items.iter().flat_map(|p| p.labels.iter().copied()).collect();
    Ok((purity(&z, &labels)?, nmi(&z, &labels)?))
}

/// Layer features of every item, extracted with the stream the model saw.
pub fn model_features<F: Real>(model: &AvHubert<F>, items: &[&Prepared], layer: usize, fusion: Fusion) -> Result<Vec<FeatureSequence>> {
    items.iter().map(|p| extract_features_with(model, &p.input, layer, fusion)).collect()
}

fn hand_kind_name(kind: TargetKind) -> &'static str {
    match kind {
        TargetKind::Mfcc => "mfcc39",
        TargetKind::Hog => "hog",
        TargetKind::ModelLayer => "model-layer",
    }
}

/// Runs every iteration of `plan` for `variant` on the pretrain split,
/// validating on the validation split, and writes a run directory.
pub fn iterative_pretrain<F: Real>(
    corpus: &Corpus,
    base: &ModelConfig,
    plan: &IterationPlan,
    variant: Variant,
    kmeans: &KmeansConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<RunRecord> {
    base.validate()?;
    plan.validate(base.layers)?;
    if plan.iterations[0].source != variant.init {
        return Err(Error::Config(format!(
            "variant {variant} starts from {:?} but the plan starts from {:?}",
            variant.init, plan.iterations[0].source
        )));
    }
    std::fs::create_dir_all(out_dir).at(out_dir)?;
    let (train, train_hand) = load_split(corpus, Split::Pretrain, Some(variant.init))?;
    let (val, val_hand) = load_split(corpus, Split::Validation, Some(variant.init))?;
    let all: Vec<&Prepared> = train.iter().chain(&val).collect();
    let mut hand: Vec<FeatureSequence> = train_hand.into_iter().chain(val_hand).collect();

    let mut record = RunRecord {
        variant,
        seed,
        corpus_hash: corpus.manifest.config_hash.clone(),
        model: base.clone(),
        plan: plan.clone(),
        kmeans: *kmeans,
        iterations: Vec::new(),
    };
    // best model of the chain whose features feed the next iteration
    let mut source: Option<(AvHubert<F>, String)> = None;
    let n = plan.iterations.len();
    for (i, spec) in plan.iterations.iter().enumerate() {
        let it = i + 1;
        let rel = |name: &str| format!("iter{it}/{name}");
        let dir = out_dir.join(format!("iter{it}"));
        std::fs::create_dir_all(&dir).at(&dir)?;

        let (features, target_source, source_checkpoint) = match (&source, spec.layer) {
            (None, _) => (
                std::mem::take(&mut hand),
                TargetSource {
                    feature_kind: hand_kind_name(spec.source).into(),
                    iteration: 0,
                    layer: None,
                },
                None,
            ),
            (Some((m, path)), Some(layer)) => (
                model_features(m, &all, layer, variant.sub.fusion())?,
                TargetSource {
                    feature_kind: hand_kind_name(TargetKind::ModelLayer).into(),
                    iteration: it - 1,
                    layer: Some(layer),
                },
                Some(path.clone()),
            ),
            (Some(_), None) => return Err(Error::Config(format!("iteration {it} has no layer to cluster"))),
        };
        let cluster_seed = seed::substream_idx(seed, "cluster", it as u64);
        let (targets, codebook) = cluster_items(&all, &features, spec.k, kmeans, cluster_seed, target_source.clone())?;
        drop(features);
        let (pur, nm) = target_quality(&all, &targets)?;
        save_codebook(&out_dir.join(rel("codebook.avk")), &codebook)?;
        save_targets(&out_dir.join(rel("targets.avt")), &targets)?;

        let train_stream = |stream: super::config::Stream, tag: &str| -> Result<Trained<F>> {
            let mut cfg = stream.configure(base);
            cfg.codebook_size = spec.k;
            let model = AvHubert::<F>::new(cfg, seed::substream_idx(seed, &format!("{tag}init"), it as u64))?;
            pretrain_iteration(
                model,
                &train,
                &val,
                &targets,
                &spec.masking,
                &spec.train,
                seed::substream_idx(seed, &format!("{tag}train"), it as u64),
            )
        };
        let main = train_stream(variant.model, "")?;
        let info = |role: &str| serde_json::json!({"variant": variant.to_string(), "iteration": it, "role": role, "seed": seed});
        save_model(&out_dir.join(rel("checkpoint.avp")), &main.model, info("final"))?;
        save_model(&out_dir.join(rel("best.avp")), &main.best, info("best"))?;
        write_loss_curve(&out_dir.join(rel("loss.csv")), &main.log)?;

        let mut sub_checkpoint = None;
        if variant.sub != variant.model && it < n {
            let sub = train_stream(variant.sub, "sub-")?;
            save_model(&out_dir.join(rel("sub_best.avp")), &sub.best, info("sub-best"))?;
            sub_checkpoint = Some(rel("sub_best.avp"));
            source = Some((sub.best, rel("sub_best.avp")));
        } else {
            source = Some((main.best.clone(), rel("best.avp")));
        }

        let train_loss = main.log.tail_mean((spec.train.steps / 10).max(1));
        let iteration = IterationRecord {
            iteration: it,
            source: target_source,
            source_checkpoint,
            k: spec.k,
            layer: spec.layer,
            purity: pur,
            nmi: nm,
            train_loss,
            val_loss: main.log.best.map(|(_, v)| v),
            codebook: rel("codebook.avk"),
            targets: rel("targets.avt"),
            checkpoint: rel("checkpoint.avp"),
            best_checkpoint: rel("best.avp"),
            sub_checkpoint,
            loss_curve: rel("loss.csv"),
        };
        iteration.write_metrics(&dir.join("metrics.csv"))?;
        record.iterations.push(iteration);
        record.save(&out_dir.join(RUN_FILE))?;
    }
    record.write_metrics(&out_dir.join("metrics.csv"))?;
    record.verify(out_dir)?;
    Ok(record)
}
