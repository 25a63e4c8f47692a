//! The audio-visual encoder: a linear audio front-end, a small visual
//! front-end with a temporal convolution, modality-dropout fusion, a pre-norm
//! transformer, a cluster-prediction head and an optional CTC head.

mod config;
mod persist;

pub use config::ModelConfig;
pub use persist::{load_model, model_from_checkpoint, model_to_checkpoint, save_model, CheckpointHeader};

use avhubert_neural::{Graph, Init, ParamId, ParamStore, Real, Segment, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureSequence};
use crate::seed;

/// Which streams reach the fusion layer for one sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fusion {
    Both,
    AudioOnly,
    VisualOnly,
}

impl Fusion {
    /// Modality dropout: both streams with probability `p_m`, otherwise
    /// audio alone with probability `p_a` and video alone with `1 - p_a`.
    pub fn sample(p_m: f64, p_a: f64, rng: &mut impl Rng) -> Self {
        if rng.random::<f64>() < p_m {
            Fusion::Both
        } else if rng.random::<f64>() < p_a {
            Fusion::AudioOnly
        } else {
            Fusion::VisualOnly
        }
    }

    fn keeps_audio(self) -> bool {
        self != Fusion::VisualOnly
    }

    fn keeps_video(self) -> bool {
        self != Fusion::AudioOnly
    }
}

/// A packed batch: sequences laid back to back, one row per video frame.
#[derive(Debug, Clone, Copy)]
pub struct ModelInput<'a> {
    pub lengths: &'a [usize],
    /// `rows x audio_dim` stacked filterbank frames.
    pub audio: &'a [f32],
    /// `rows x pixels` images.
    pub video: &'a [f32],
    /// Rows whose audio input is replaced by the learned audio mask.
    pub audio_mask: Option<&'a [bool]>,
    /// Rows whose image is replaced by the learned visual mask.
    pub video_mask: Option<&'a [bool]>,
    /// Rows whose fused feature is replaced by the learned fused mask.
    pub fused_mask: Option<&'a [bool]>,
    pub fusion: &'a [Fusion],
}

impl ModelInput<'_> {
    pub fn rows(&self) -> usize {
        self.lengths.iter().sum()
    }
}

/// Training mode carries the seed of the dropout stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train(u64),
    Eval,
}

#[derive(Debug, Clone)]
struct BlockIds {
    ln1_g: ParamId,
    ln1_b: ParamId,
    wq: (ParamId, ParamId),
    wk: (ParamId, ParamId),
    wv: (ParamId, ParamId),
    wo: (ParamId, ParamId),
    ln2_g: ParamId,
    ln2_b: ParamId,
    ff1: (ParamId, ParamId),
    ff2: (ParamId, ParamId),
}

#[derive(Debug, Clone)]
struct Ids {
    audio_mask: ParamId,
    audio: (ParamId, ParamId),
    video_mask: ParamId,
    vis1: (ParamId, ParamId),
    conv: (ParamId, ParamId),
    vis2: (ParamId, ParamId),
    fused_mask: ParamId,
    blocks: Vec<BlockIds>,
    proj: (ParamId, ParamId),
    ctc: Option<(ParamId, ParamId)>,
}

#[derive(Debug, Clone)]
pub struct AvHubert<F: Real> {
    pub config: ModelConfig,
    pub params: ParamStore<F>,
    ids: Ids,
}

fn add<F: Real>(store: &mut ParamStore<F>, name: &str, shape: Vec<usize>, init: Init, rng: &mut impl Rng) -> Result<ParamId> {
    Ok(store.add(name, init.tensor(shape, rng))?)
}

fn linear_params<F: Real>(
    store: &mut ParamStore<F>,
    name: &str,
    fan_in: usize,
    fan_out: usize,
    rng: &mut impl Rng,
) -> Result<(ParamId, ParamId)> {
    Ok((
        add(store, &format!("{name}.w"), vec![fan_in, fan_out], Init::Xavier, rng)?,
        add(store, &format!("{name}.b"), vec![fan_out], Init::Zeros, rng)?,
    ))
}

/// Sinusoidal position code of row `pos`, column `j`.
pub fn position_code(pos: usize, j: usize, dim: usize) -> f64 {
    let i = (j / 2) as f64;
    let angle = pos as f64 / 10_000f64.powf(2.0 * i / dim as f64);
    if j % 2 == 0 {
        angle.sin()
    } else {
        angle.cos()
    }
}

fn ctc_head_params<F: Real>(store: &mut ParamStore<F>, dim: usize, vocab: usize, rng: &mut impl Rng) -> Result<(ParamId, ParamId)> {
    linear_params(store, "ctc", dim, vocab + 1, rng)
}

impl<F: Real> AvHubert<F> {
    /// Fresh parameters drawn from the `init` sub-stream of `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng(seed::substream(seed, "init"));
        let rng = &mut rng;
        let mut s = ParamStore::new();
        let (d, h) = (config.dim, config.half());
        let audio_mask = add(&mut s, "audio.mask", vec![config.audio_dim], Init::Uniform(1.0), rng)?;
        let audio = linear_params(&mut s, "audio", config.audio_dim, h, rng)?;
        let video_mask = add(&mut s, "visual.mask", vec![config.pixels()], Init::Uniform(0.5), rng)?;
        let vis1 = linear_params(&mut s, "visual.in", config.pixels(), config.visual_hidden, rng)?;
        let conv_a = (1.0 / config.conv_width as f64).sqrt();
        let conv = (
            add(&mut s, "visual.conv.w", vec![config.conv_width, config.visual_hidden], Init::Uniform(conv_a), rng)?,
            add(&mut s, "visual.conv.b", vec![config.visual_hidden], Init::Zeros, rng)?,
        );
        let vis2 = linear_params(&mut s, "visual.out", config.visual_hidden, h, rng)?;
        let fused_mask = add(&mut s, "fused.mask", vec![d], Init::Uniform(0.5), rng)?;
        let mut blocks = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = format!("block{l}");
            blocks.push(BlockIds {
                ln1_g: add(&mut s, &format!("{p}.ln1.g"), vec![d], Init::Ones, rng)?,
                ln1_b: add(&mut s, &format!("{p}.ln1.b"), vec![d], Init::Zeros, rng)?,
                wq: linear_params(&mut s, &format!("{p}.q"), d, d, rng)?,
                wk: linear_params(&mut s, &format!("{p}.k"), d, d, rng)?,
                wv: linear_params(&mut s, &format!("{p}.v"), d, d, rng)?,
                wo: linear_params(&mut s, &format!("{p}.o"), d, d, rng)?,
                ln2_g: add(&mut s, &format!("{p}.ln2.g"), vec![d], Init::Ones, rng)?,
                ln2_b: add(&mut s, &format!("{p}.ln2.b"), vec![d], Init::Zeros, rng)?,
                ff1: linear_params(&mut s, &format!("{p}.ff1"), d, config.ffn_dim, rng)?,
                ff2: linear_params(&mut s, &format!("{p}.ff2"), config.ffn_dim, d, rng)?,
            });
        }
        let proj = linear_params(&mut s, "proj", d, config.codebook_size, rng)?;
        let ctc = match config.ctc_vocab {
            Some(u) => Some(ctc_head_params(&mut s, d, u, rng)?),
            None => None,
        };
        Ok(Self {
            config,
            params: s,
            ids: Ids {
                audio_mask,
                audio,
                video_mask,
                vis1,
                conv,
                vis2,
                fused_mask,
                blocks,
                proj,
                ctc,
            },
        })
    }

    /// Adds a freshly initialized CTC head over `vocab` units plus blank.
    pub fn attach_ctc_head(&mut self, vocab: usize, seed: u64) -> Result<()> {
        match self.config.ctc_vocab {
            Some(u) if u == vocab => return Ok(()),
            Some(u) => {
                return Err(Error::Config(format!("model already has a CTC head over {u} units, asked for {vocab}")))
            }
            None => {}
        }
        if vocab == 0 {
            return Err(Error::Config("CTC vocabulary must be nonempty".into()));
        }
        let mut rng = seed::rng(seed::substream(seed, "ctc-head"));
        self.ids.ctc = Some(ctc_head_params(&mut self.params, self.config.dim, vocab, &mut rng)?);
        self.config.ctc_vocab = Some(vocab);
        Ok(())
    }

    pub fn has_ctc_head(&self) -> bool {
        self.ids.ctc.is_some()
    }

    /// True for parameters of the CTC head.
    pub fn is_head(&self, id: ParamId) -> bool {
        self.ids.ctc.is_some_and(|(w, b)| id == w || id == b)
    }

    pub fn cast<G: Real>(&self) -> AvHubert<G> {
        AvHubert {
            config: self.config.clone(),
            params: self.params.cast(),
            ids: self.ids.clone(),
        }
    }

    fn linear(&self, g: &mut Graph<F>, x: Var, (w, b): (ParamId, ParamId)) -> Result<Var> {
        let w = g.param(&self.params, w);
        let b = g.param(&self.params, b);
        let y = g.matmul(x, w)?;
        Ok(g.add_row(y, b)?)
    }

    fn rows_const(g: &mut Graph<F>, data: &[f32], cols: usize) -> Result<Var> {
        let t = Tensor::new(vec![data.len() / cols, cols], data.iter().map(|&v| F::from_f64_lossy(v as f64)).collect())?;
        Ok(g.constant(t))
    }

    fn check(&self, input: &ModelInput) -> Result<usize> {
        let rows = input.rows();
        let c = &self.config;
        let bad = |what: &str, got: usize, want: usize| {
            Error::Param(format!("shape mismatch in model input {what}: {got} values, expected {want}"))
        };
        if input.audio.len() != rows * c.audio_dim {
            return Err(bad("audio", input.audio.len(), rows * c.audio_dim));
        }
        if input.video.len() != rows * c.pixels() {
            return Err(bad("video", input.video.len(), rows * c.pixels()));
        }
        if input.fusion.len() != input.lengths.len() {
            return Err(bad("fusion", input.fusion.len(), input.lengths.len()));
        }
        for (name, m) in [("audio mask", input.audio_mask), ("video mask", input.video_mask), ("fused mask", input.fused_mask)] {
            if let Some(m) = m {
                if m.len() != rows {
                    return Err(bad(name, m.len(), rows));
                }
            }
        }
        if rows == 0 || input.lengths.contains(&0) {
            return Err(Error::Param("empty sequence in batch".into()));
        }
        Ok(rows)
    }

    /// Audio branch: per-frame layer norm, learned mask substitution, linear.
    pub fn encode_audio(&self, g: &mut Graph<F>, audio: &[f32], mask: Option<&[bool]>) -> Result<Var> {
        let x = Self::rows_const(g, audio, self.config.audio_dim)?;
        let mut x = g.layer_norm(x, None, None)?;
        if let Some(m) = mask.filter(|m| m.iter().any(|&f| f)) {
            let emb = g.param(&self.params, self.ids.audio_mask);
            x = g.select_rows(x, emb, m)?;
        }
        self.linear(g, x, self.ids.audio)
    }

    /// Visual branch: flatten, linear, relu, depthwise temporal convolution
    /// within each sequence, linear.
    pub fn encode_visual(&self, g: &mut Graph<F>, video: &[f32], segments: &[Segment], mask: Option<&[bool]>) -> Result<Var> {
        let mut x = Self::rows_const(g, video, self.config.pixels())?;
        if let Some(m) = mask.filter(|m| m.iter().any(|&f| f)) {
            let emb = g.param(&self.params, self.ids.video_mask);
            x = g.select_rows(x, emb, m)?;
        }
        let h = self.linear(g, x, self.ids.vis1)?;
        let h = g.relu(h)?;
        let w = g.param(&self.params, self.ids.conv.0);
        let b = g.param(&self.params, self.ids.conv.1);
        let h = g.depthwise_conv(h, w, b, segments)?;
        self.linear(g, h, self.ids.vis2)
    }

    /// Concatenates the two branches, zeroing a dropped modality for all
    /// rows of its sequence.
    pub fn fuse(&self, g: &mut Graph<F>, fa: Var, fv: Var, lengths: &[usize], fusion: &[Fusion]) -> Result<Var> {
        let mut keep_a = Vec::new();
        let mut keep_v = Vec::new();
        for (&len, &f) in lengths.iter().zip(fusion) {
            let (a, v) = (f.keeps_audio(), f.keeps_video());
            keep_a.extend(std::iter::repeat_n(if a { F::one() } else { F::zero() }, len));
            keep_v.extend(std::iter::repeat_n(if v { F::one() } else { F::zero() }, len));
        }
        let fa = if keep_a.iter().all(|&k| k == F::one()) { fa } else { g.scale_rows(fa, keep_a)? };
        let fv = if keep_v.iter().all(|&k| k == F::one()) { fv } else { g.scale_rows(fv, keep_v)? };
        Ok(g.concat_cols(fa, fv)?)
    }

    fn dropout(&self, g: &mut Graph<F>, x: Var, rng: &mut Option<impl Rng>) -> Result<Var> {
        let p = self.config.dropout;
        match rng {
            Some(r) if p > 0.0 => {
                let keep: Vec<bool> = (0..g.value(x).len()).map(|_| r.random::<f64>() >= p).collect();
                Ok(g.dropout(x, &keep, p)?)
            }
            _ => Ok(x),
        }
    }

    fn block(&self, g: &mut Graph<F>, x: Var, b: &BlockIds, segments: &[Segment], rng: &mut Option<impl Rng>) -> Result<Var> {
        let (g1, b1) = (g.param(&self.params, b.ln1_g), g.param(&self.params, b.ln1_b));
        let h = g.layer_norm(x, Some(g1), Some(b1))?;
        let q = self.linear(g, h, b.wq)?;
        let k = self.linear(g, h, b.wk)?;
        let v = self.linear(g, h, b.wv)?;
        let a = g.attention(q, k, v, segments, self.config.heads)?;
        let a = self.linear(g, a, b.wo)?;
        let a = self.dropout(g, a, rng)?;
        let x = g.add(x, a)?;
        let (g2, b2) = (g.param(&self.params, b.ln2_g), g.param(&self.params, b.ln2_b));
        let h = g.layer_norm(x, Some(g2), Some(b2))?;
        let h = self.linear(g, h, b.ff1)?;
        let h = g.gelu(h)?;
        let h = self.linear(g, h, b.ff2)?;
        let h = self.dropout(g, h, rng)?;
        Ok(g.add(x, h)?)
    }

    /// Fused-mask substitution, sinusoidal positions and the first `upto`
    /// transformer blocks.
    pub fn transformer(
        &self,
        g: &mut Graph<F>,
        fused: Var,
        segments: &[Segment],
        fused_mask: Option<&[bool]>,
        upto: usize,
        mode: Mode,
    ) -> Result<Var> {
        let mut rng = match mode {
            Mode::Train(s) => Some(seed::rng(seed::substream(s, "dropout"))),
            Mode::Eval => None,
        };
        let mut x = fused;
        if let Some(m) = fused_mask.filter(|m| m.iter().any(|&f| f)) {
            let emb = g.param(&self.params, self.ids.fused_mask);
            x = g.select_rows(x, emb, m)?;
        }
        if self.config.positions {
            let d = self.config.dim;
            let rows: usize = segments.iter().map(|s| s.len).sum();
            let mut pe = Vec::with_capacity(rows * d);
            for s in segments {
                for pos in 0..s.len {
                    pe.extend((0..d).map(|j| F::from_f64_lossy(position_code(pos, j, d))));
                }
            }
            let pe = g.constant(Tensor::new(vec![rows, d], pe)?);
            x = g.add(x, pe)?;
        }
        x = self.dropout(g, x, &mut rng)?;
        for b in &self.ids.blocks[..upto] {
            let skip = match rng.as_mut() {
                Some(r) => self.config.layer_drop > 0.0 && r.random::<f64>() < self.config.layer_drop,
                None => false,
            };
            if !skip {
                x = self.block(g, x, b, segments, &mut rng)?;
            }
        }
        Ok(x)
    }

    /// Contextual features after block `upto` (all blocks when `None`).
    pub fn forward(&self, g: &mut Graph<F>, input: &ModelInput, mode: Mode, upto: Option<usize>) -> Result<Var> {
        self.check(input)?;
        let upto = upto.unwrap_or(self.config.layers);
        if upto > self.config.layers {
            return Err(Error::Param(format!("layer {upto} beyond depth {}", self.config.layers)));
        }
        let segments = Segment::pack(input.lengths);
        let fa = self.encode_audio(g, input.audio, input.audio_mask)?;
        let fv = self.encode_visual(g, input.video, &segments, input.video_mask)?;
        let fused = self.fuse(g, fa, fv, input.lengths, input.fusion)?;
        self.transformer(g, fused, &segments, input.fused_mask, upto, mode)
    }

    /// Log-probabilities over cluster ids, one row per frame.
    pub fn predict_clusters(&self, g: &mut Graph<F>, e: Var) -> Result<Var> {
        let y = self.linear(g, e, self.ids.proj)?;
        Ok(g.log_softmax(y)?)
    }

    /// Log-probabilities over CTC units with blank as the last column.
    pub fn ctc_log_probs(&self, g: &mut Graph<F>, e: Var) -> Result<Var> {
        let head = self.ids.ctc.ok_or_else(|| Error::Config("model has no CTC head".into()))?;
        let y = self.linear(g, e, head)?;
        Ok(g.log_softmax(y)?)
    }

    /// Blank index of the CTC head.
    pub fn blank(&self) -> Option<usize> {
        self.config.ctc_vocab
    }
}

/// Masked cluster-prediction loss: `-log p_t(z_t)` summed over masked frames
/// plus `alpha` times the sum over unmasked frames, divided by the number of
/// contributing frames (unmasked frames count only when `alpha > 0`).
pub fn masked_loss<F: Real>(g: &mut Graph<F>, logp: Var, z: &[usize], masked: &[bool], alpha: f64) -> Result<Var> {
    if z.len() != masked.len() {
        return Err(Error::Param(format!("{} targets for {} mask flags", z.len(), masked.len())));
    }
    let n_masked = masked.iter().filter(|&&m| m).count();
    let n_rest = if alpha > 0.0 { masked.len() - n_masked } else { 0 };
    if n_masked + n_rest == 0 {
        return Err(Error::Loss("no frames contribute to the masked loss".into()));
    }
    let a = F::from_f64_lossy(alpha);
    let weights: Vec<F> = masked.iter().map(|&m| if m { F::one() } else { a }).collect();
    let denom = F::from_usize(n_masked + n_rest).unwrap();
    Ok(g.nll(logp, z, &weights, denom)?)
}

/// Inputs of one utterance as the model consumes them.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceInput {
    pub audio: Vec<f32>,
    pub video: Vec<f32>,
    pub frames: usize,
}

/// Eval-mode features after block `layer` with both modalities present and
/// no masking.
pub fn extract_features<F: Real>(model: &AvHubert<F>, utt: &UtteranceInput, layer: usize) -> Result<FeatureSequence> {
    extract_features_with(model, utt, layer, Fusion::Both)
}

/// [`extract_features`] for a model that only ever saw one stream.
pub fn extract_features_with<F: Real>(
    model: &AvHubert<F>,
    utt: &UtteranceInput,
    layer: usize,
    fusion: Fusion,
) -> Result<FeatureSequence> {
    if layer == 0 || layer > model.config.layers {
        return Err(Error::Param(format!("layer {layer} not in 1..={}", model.config.layers)));
    }
    let mut g = Graph::new();
    let input = ModelInput {
        lengths: &[utt.frames],
        audio: &utt.audio,
        video: &utt.video,
        audio_mask: None,
        video_mask: None,
        fused_mask: None,
        fusion: &[fusion],
    };
    let e = model.forward(&mut g, &input, Mode::Eval, Some(layer))?;
    let data = g.value(e).data().iter().map(|v| v.as_f32()).collect();
    FeatureSequence::new(data, model.config.dim, 25, FeatureKind::ModelLayer)
}

/// Per-frame CTC log-probabilities of one utterance in eval mode.
pub fn ctc_posteriors<F: Real>(model: &AvHubert<F>, utt: &UtteranceInput, fusion: Fusion) -> Result<Vec<f32>> {
    let mut g = Graph::new();
    let input = ModelInput {
        lengths: &[utt.frames],
        audio: &utt.audio,
        video: &utt.video,
        audio_mask: None,
        video_mask: None,
        fused_mask: None,
        fusion: &[fusion],
    };
    let e = model.forward(&mut g, &input, Mode::Eval, None)?;
    let lp = model.ctc_log_probs(&mut g, e)?;
    Ok(g.value(lp).data().iter().map(|v| v.as_f32()).collect())
}
