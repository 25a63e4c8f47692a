use avhubert_neural::{ctc_min_frames, Graph, Real, Segment, Var};
use serde::{Deserialize, Serialize};

use crate::decode::{beam_decode, edit_distance, greedy_decode, word_error_rate};
use crate::error::{Error, Result};
use crate::model::{ctc_posteriors, AvHubert, Fusion, Mode, ModelConfig, ModelInput};
use crate::seed;

use super::config::{FinetuneConfig, InputMode};
use super::data::{pack, Prepared};
use super::pretrain::fixed_batches;
use super::run::{train_loop, Trained};

fn streams_seen(c: &ModelConfig) -> (bool, bool) {
    (c.p_m > 0.0 || c.p_a > 0.0, c.p_m > 0.0 || c.p_a < 1.0)
}

fn ctc_batch<F: Real>(m: &AvHubert<F>, g: &mut Graph<F>, items: &[&Prepared], fusion: Fusion, mode: Mode) -> Result<Var> {
    let packed = pack(items.iter().map(|p| &p.input));
    let fusions = vec![fusion; items.len()];
    let input = ModelInput {
        lengths: &packed.lengths,
        audio: &packed.audio,
        video: &packed.video,
        audio_mask: None,
        video_mask: None,
        fused_mask: None,
        fusion: &fusions,
    };
    let e = m.forward(g, &input, mode, None)?;
    let lp = m.ctc_log_probs(g, e)?;
    let targets: Vec<Vec<usize>> = items.iter().map(|p| p.phones.iter().map(|&v| v as usize).collect()).collect();
    let blank = m.blank().expect("CTC head attached");
    Ok(g.ctc_loss(lp, &Segment::pack(&packed.lengths), &targets, blank)?)
}

/// Mean per-utterance CTC loss in eval mode.
pub fn ctc_validation_loss<F: Real>(model: &AvHubert<F>, val: &[Prepared], mode: InputMode, budget: usize) -> Result<Option<f64>> {
    if val.is_empty() {
        return Ok(None);
    }
    let mut total = 0.0;
    for batch in fixed_batches(val, budget) {
        let items: Vec<&Prepared> = batch.iter().map(|&i| &val[i]).collect();
        let mut g = Graph::new();
        let l = ctc_batch(model, &mut g, &items, mode.fusion(), Mode::Eval)?;
        total += g.value(l).data()[0].as_f64() * items.len() as f64;
    }
    Ok(Some(total / val.len() as f64))
}

/// Greedy phone error rate: total edit distance over total reference phones.
pub fn phone_error_rate<F: Real>(model: &AvHubert<F>, items: &[Prepared], mode: InputMode) -> Result<Option<f64>> {
    let classes = model.blank().ok_or_else(|| Error::Config("model has no CTC head".into()))? + 1;
    let (mut errs, mut total) = (0, 0);
    for p in items {
        let lp = ctc_posteriors(model, &p.input, mode.fusion())?;
        let hyp: Vec<u16> = greedy_decode(&lp, classes)?.into_iter().map(|t| t as u16).collect();
        errs += edit_distance(&hyp, &p.phones);
        total += p.phones.len();
    }
    Ok((total > 0).then(|| errs as f64 / total as f64))
}

/// CTC fine-tuning on phone transcripts. `init` is a pretrained model or
/// `None` for a freshly initialized baseline built from `base`. The encoder
/// is frozen for the configured leading share of updates. The returned best
/// model has the lowest validation phone error rate.
pub fn finetune<F: Real>(
    init: Option<AvHubert<F>>,
    base: &ModelConfig,
    labeled: &[Prepared],
    val: &[Prepared],
    vocab: usize,
    cfg: &FinetuneConfig,
    seed: u64,
) -> Result<Trained<F>> {
    cfg.validate()?;
    if labeled.is_empty() {
        return Err(Error::Config("no labeled utterances to fine-tune on".into()));
    }
    let mut model = match init {
        Some(m) => {
            let (audio, video) = streams_seen(&m.config);
            let need_audio = cfg.mode != InputMode::VisualOnly;
            let need_video = cfg.mode != InputMode::AudioOnly;
            if (need_audio && !audio) || (need_video && !video) {
                return Err(Error::Config(format!(
                    "{:?} fine-tuning needs a stream the checkpoint never saw (p_m = {}, p_a = {})",
                    cfg.mode, m.config.p_m, m.config.p_a
                )));
            }
            m
        }
        None => AvHubert::new(base.clone(), seed::substream(seed, "scratch"))?,
    };
    model.attach_ctc_head(vocab, seed)?;
    if let Some(bad) = labeled.iter().find(|p| p.phones.iter().any(|&t| t as usize >= vocab)) {
        return Err(Error::Config(format!("utterance {} has a phone outside the {vocab}-unit vocabulary", bad.id)));
    }
    let lengths = labeled.iter().map(Prepared::frames).collect();
    let fusion = cfg.mode.fusion();
    train_loop(
        model,
        lengths,
        &cfg.train,
        seed::substream(seed, "finetune"),
        cfg.frozen_steps(),
        |m, g, batch, s| {
            let items: Vec<&Prepared> = batch.iter().map(|&i| &labeled[i]).collect();
            ctc_batch(m, g, &items, fusion, Mode::Train(s))
        },
        |m| phone_error_rate(m, val, cfg.mode),
    )
}

/// Decoding result of one utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UttScore {
    pub id: u32,
    pub ref_words: usize,
    pub errors: usize,
    pub hyp_phones: Vec<u16>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub utterances: Vec<UttScore>,
    /// Total word errors over total reference words.
    pub wer: f64,
}

/// Decodes every item (greedy when `beam` is `None`) and scores words
/// recovered by lexicon segmentation.
pub fn evaluate<F: Real>(
    model: &AvHubert<F>,
    items: &[Prepared],
    mode: InputMode,
    lexicon: &[Vec<u16>],
    beam: Option<usize>,
) -> Result<Evaluation> {
    let classes = model.blank().ok_or_else(|| Error::Config("model has no CTC head".into()))? + 1;
    let mut utterances = Vec::with_capacity(items.len());
    let (mut errs, mut words) = (0, 0);
    for p in items {
        let lp = ctc_posteriors(model, &p.input, mode.fusion())?;
        let tokens = match beam {
            None => greedy_decode(&lp, classes)?,
            Some(w) => beam_decode(&lp, classes, w)?.tokens,
        };
        let hyp: Vec<u16> = tokens.into_iter().map(|t| t as u16).collect();
        let (e, n) = word_error_rate(&hyp, &p.words, lexicon)?;
        errs += e;
        words += n;
        utterances.push(UttScore {
            id: p.id,
            ref_words: n,
            errors: e,
            hyp_phones: hyp,
        });
    }
    if words == 0 {
        return Err(Error::Param("no reference words to score".into()));
    }
    Ok(Evaluation {
        utterances,
        wer: errs as f64 / words as f64,
    })
}

/// Replaces transcripts with greedy decodes of `labeler`. Decodes too long
/// for their utterance under CTC are dropped.
pub fn pseudo_label<F: Real>(labeler: &AvHubert<F>, mode: InputMode, items: &[Prepared]) -> Result<Vec<Prepared>> {
    let classes = labeler.blank().ok_or_else(|| Error::Config("labeling model has no CTC head".into()))? + 1;
    let mut out = Vec::with_capacity(items.len());
    for p in items {
        let lp = ctc_posteriors(labeler, &p.input, mode.fusion())?;
        let tokens = greedy_decode(&lp, classes)?;
        if ctc_min_frames(&tokens) > p.frames() {
            continue;
        }
        let mut q = p.clone();
        q.phones = tokens.into_iter().map(|t| t as u16).collect();
        out.push(q);
    }
    Ok(out)
}

/// Fine-tunes `pretrained` on pseudo-labeled `unlabeled` data together with
/// the ground-truth `labeled` data.
#[allow(clippy::too_many_arguments)]
pub fn self_train<F: Real>(
    labeler: &AvHubert<F>,
    labeler_mode: InputMode,
    unlabeled: &[Prepared],
    labeled: &[Prepared],
    val: &[Prepared],
    pretrained: AvHubert<F>,
    vocab: usize,
    cfg: &FinetuneConfig,
    seed: u64,
) -> Result<Trained<F>> {
    if unlabeled.is_empty() {
        return Err(Error::Config("self-training needs unlabeled utterances".into()));
    }
    let mut union = pseudo_label(labeler, labeler_mode, unlabeled)?;
    union.extend(labeled.iter().cloned());
    let base = pretrained.config.clone();
    finetune(Some(pretrained), &base, &union, val, vocab, cfg, seed)
}
