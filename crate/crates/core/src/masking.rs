//! Span masks and input corruption: segment substitution for video,
//! learned-embedding flags for audio and fused features, and the frame-wise
//! substitution and Gaussian-noise variants.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Audio,
    Visual,
    Fused,
}

/// Half-open masked frame intervals plus, for substitution, one imposter
/// offset per span. A `None` offset means the span falls back to the
/// learned mask embedding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskPlan {
    pub len: usize,
    pub modality: Modality,
    pub spans: Vec<(usize, usize)>,
    pub offsets: Vec<Option<usize>>,
    pub imposter_len: usize,
    pub same_sequence: bool,
}

impl MaskPlan {
    pub fn empty(len: usize, modality: Modality) -> Self {
        Self {
            len,
            modality,
            spans: Vec::new(),
            offsets: Vec::new(),
            imposter_len: 0,
            same_sequence: false,
        }
    }

    /// Plan from explicit spans, which are sorted and merged.
    pub fn from_spans(len: usize, modality: Modality, spans: &[(usize, usize)]) -> Result<Self> {
        if let Some(&(s, t)) = spans.iter().find(|&&(s, t)| s >= t || t > len) {
            return Err(Error::Masking(format!("span ({s}, {t}) invalid for length {len}")));
        }
        let mut plan = Self::empty(len, modality);
        plan.spans = merge(spans.to_vec());
        Ok(plan)
    }

    pub fn flags(&self) -> Vec<bool> {
        let mut f = vec![false; self.len];
        for &(s, t) in &self.spans {
            f[s..t].iter_mut().for_each(|x| *x = true);
        }
        f
    }

    pub fn masked_frames(&self) -> usize {
        self.spans.iter().map(|(s, t)| t - s).sum()
    }

    pub fn masked_fraction(&self) -> f64 {
        if self.len == 0 {
            0.0
        } else {
            self.masked_frames() as f64 / self.len as f64
        }
    }
}

fn merge(mut spans: Vec<(usize, usize)>) -> Vec<(usize, usize)> {
    spans.sort_unstable();
    let mut out: Vec<(usize, usize)> = Vec::with_capacity(spans.len());
    for (s, t) in spans {
        match out.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(t),
            _ => out.push((s, t)),
        }
    }
    out
}

/// Frames independently chosen as span starts with probability `p`.
pub fn sample_starts(len: usize, p: f64, rng: &mut impl Rng) -> Vec<usize> {
    (0..len).filter(|_| p > 0.0 && rng.random_bool(p.min(1.0))).collect()
}

/// Spans `[start, min(start + l, len))` for every sampled start, merged.
pub fn sample_spans(len: usize, p: f64, l: usize, modality: Modality, seed: u64) -> Result<MaskPlan> {
    if len == 0 || !(0.0..=1.0).contains(&p) || l == 0 {
        return Err(Error::Masking(format!("need T >= 1, 0 <= p <= 1, l >= 1; got T={len}, p={p}, l={l}")));
    }
    let mut rng = seed::rng(seed);
    let raw: Vec<(usize, usize)> = sample_starts(len, p, &mut rng)
        .into_iter()
        .map(|s| (s, (s + l).min(len)))
        .collect();
    let mut plan = MaskPlan::empty(len, modality);
    plan.spans = merge(raw);
    Ok(plan)
}

/// Inclusive offset ranges from which an imposter window for span `(s, t)`
/// may start inside a source of `t_f` frames. In same-sequence mode the
/// window must not overlap the span itself.
pub fn offset_domain(span: (usize, usize), t_f: usize, same_sequence: bool) -> Vec<(usize, usize)> {
    let (s, t) = span;
    let n = t - s;
    if n > t_f {
        return Vec::new();
    }
    let last = t_f - n;
    if !same_sequence {
        return vec![(0, last)];
    }
    let mut out = Vec::new();
    if s >= n {
        out.push((0, s - n));
    }
    if t <= last {
        out.push((t, last));
    }
    out
}

fn sample_in(domain: &[(usize, usize)], rng: &mut impl Rng) -> Option<usize> {
    let total: usize = domain.iter().map(|(a, b)| b - a + 1).sum();
    if total == 0 {
        return None;
    }
    let mut u = rng.random_range(0..total);
    for &(a, b) in domain {
        let size = b - a + 1;
        if u < size {
            return Some(a + u);
        }
        u -= size;
    }
    unreachable!()
}

/// One uniformly drawn offset per span.
pub fn sample_offsets(plan: &MaskPlan, t_f: usize, same_sequence: bool, seed: u64) -> Result<Vec<usize>> {
    let mut rng = seed::rng(seed);
    plan.spans
        .iter()
        .map(|&span| {
            sample_in(&offset_domain(span, t_f, same_sequence), &mut rng).ok_or_else(|| {
                Error::Masking(format!(
                    "no imposter window of length {} in {t_f} frames for span {span:?}",
                    span.1 - span.0
                ))
            })
        })
        .collect()
}

/// Fills `plan.offsets`, leaving `None` where a span's domain is empty.
pub fn assign_offsets(plan: &mut MaskPlan, t_f: usize, same_sequence: bool, seed: u64) {
    let mut rng = seed::rng(seed);
    plan.offsets = plan
        .spans
        .iter()
        .map(|&span| sample_in(&offset_domain(span, t_f, same_sequence), &mut rng))
        .collect();
    plan.imposter_len = t_f;
    plan.same_sequence = same_sequence;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VisualMode {
    /// Consecutive imposter frames per span.
    SubSeg,
    /// Independently drawn imposter frames.
    SubFrm,
    Learned,
    Gauss,
}

/// Corrupted video plus the frames the model must replace with its learned
/// mask embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptedVisual {
    pub frames: Vec<f32>,
    pub learned: Vec<bool>,
}

/// Applies a visual mask plan. `frames` and `imposter` hold `frame_size`
/// values per frame; substitution modes need an imposter (which may be the
/// input itself) and, for `SubSeg`, offsets from [`assign_offsets`].
pub fn corrupt_visual(
    frames: &[f32],
    frame_size: usize,
    plan: &MaskPlan,
    imposter: Option<&[f32]>,
    mode: VisualMode,
    seed: u64,
) -> Result<CorruptedVisual> {
    if frame_size == 0 || frames.len() != plan.len * frame_size {
        return Err(Error::Param(format!(
            "{} values are not {} frames of {frame_size}",
            frames.len(),
            plan.len
        )));
    }
    if plan.modality != Modality::Visual {
        return Err(Error::Param(format!("visual corruption given a {:?} plan", plan.modality)));
    }
    let mut out = frames.to_vec();
    let mut learned = vec![false; plan.len];
    let mut rng = seed::rng(seed);
    let sub = matches!(mode, VisualMode::SubSeg | VisualMode::SubFrm);
    let imp = match (sub, imposter) {
        (true, None) => return Err(Error::Param("substitution masking needs imposter frames".into())),
        (true, Some(i)) if i.len() % frame_size != 0 => {
            return Err(Error::Param("imposter is not a whole number of frames".into()))
        }
        (_, i) => i.unwrap_or(&[]),
    };
    let t_f = imp.len() / frame_size;
    let copy = |out: &mut [f32], dst: usize, src: usize| {
        out[dst * frame_size..(dst + 1) * frame_size].copy_from_slice(&imp[src * frame_size..(src + 1) * frame_size]);
    };
    match mode {
        VisualMode::SubSeg => {
            if plan.offsets.len() != plan.spans.len() {
                return Err(Error::Param("segment substitution needs one offset per span".into()));
            }
            for (&(s, t), &off) in plan.spans.iter().zip(&plan.offsets) {
                match off {
                    Some(p) if p + (t - s) <= t_f => {
                        for i in 0..t - s {
                            copy(&mut out, s + i, p + i);
                        }
                    }
                    Some(p) => {
                        return Err(Error::Masking(format!("offset {p} overruns imposter of {t_f} frames")))
                    }
                    None => learned[s..t].iter_mut().for_each(|f| *f = true),
                }
            }
        }
        VisualMode::SubFrm => {
            for &(s, t) in &plan.spans {
                let pool: Vec<usize> = (0..t_f).filter(|&j| !plan.same_sequence || j < s || j >= t).collect();
                if pool.is_empty() {
                    learned[s..t].iter_mut().for_each(|f| *f = true);
                    continue;
                }
                for dst in s..t {
                    copy(&mut out, dst, pool[rng.random_range(0..pool.len())]);
                }
            }
        }
        VisualMode::Learned => learned = plan.flags(),
        VisualMode::Gauss => {
            let noise = Normal::new(0.5f32, 0.2).unwrap();
            for &(s, t) in &plan.spans {
                for v in &mut out[s * frame_size..t * frame_size] {
                    *v = noise.sample(&mut rng).clamp(0.0, 1.0);
                }
            }
        }
    }
    Ok(CorruptedVisual { frames: out, learned })
}

/// Audio is masked at the feature level: values pass through unchanged and
/// the flags mark frames to replace with the learned mask embedding.
pub fn corrupt_audio(features: &[f32], dim: usize, plan: &MaskPlan) -> Result<(Vec<f32>, Vec<bool>)> {
    if dim == 0 || features.len() != plan.len * dim {
        return Err(Error::Param(format!("{} values are not {} frames of {dim}", features.len(), plan.len)));
    }
    if plan.modality != Modality::Audio {
        return Err(Error::Param(format!("audio corruption given a {:?} plan", plan.modality)));
    }
    Ok((features.to_vec(), plan.flags()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_probability_gives_empty_plan() {
        let p = sample_spans(50, 0.0, 10, Modality::Audio, 1).unwrap();
        assert!(p.spans.is_empty());
        assert_eq!(p.flags(), vec![false; 50]);
    }

    #[test]
    fn all_starts_merge_to_one_span() {
        let p = sample_spans(37, 1.0, 1, Modality::Visual, 1).unwrap();
        assert_eq!(p.spans, vec![(0, 37)]);
    }

    #[test]
    fn invalid_sampling_arguments() {
        assert!(sample_spans(0, 0.5, 3, Modality::Audio, 0).is_err());
        assert!(sample_spans(5, 1.5, 3, Modality::Audio, 0).is_err());
        assert!(sample_spans(5, 0.5, 0, Modality::Audio, 0).is_err());
    }

    #[test]
    fn whole_sequence_span_has_no_same_sequence_imposter() {
        let plan = MaskPlan::from_spans(8, Modality::Visual, &[(0, 8)]).unwrap();
        assert!(matches!(sample_offsets(&plan, 8, true, 0), Err(Error::Masking(_))));
        let mut p = plan.clone();
        assign_offsets(&mut p, 8, true, 0);
        assert_eq!(p.offsets, vec![None]);
    }

    #[test]
    fn offset_domains() {
        assert_eq!(offset_domain((2, 4), 10, false), vec![(0, 8)]);
        assert_eq!(offset_domain((4, 6), 10, true), vec![(0, 2), (6, 8)]);
        // oracle: enumerate windows that stay clear of the span
        for (s, t, tf) in [(4, 6, 10), (1, 4, 9), (0, 3, 7), (5, 9, 9), (3, 5, 12)] {
            let n = t - s;
            let expect: Vec<usize> = (0..=tf - n).filter(|&p| p + n <= s || p >= t).collect();
            let got: Vec<usize> = offset_domain((s, t), tf, true)
                .into_iter()
                .flat_map(|(a, b)| a..=b)
                .collect();
            assert_eq!(got, expect, "span ({s}, {t}) in {tf}");
        }
    }

    #[test]
    fn substitution_instantiates_the_offset() {
        let frames: Vec<f32> = (0..5).map(|v| v as f32).collect();
        let imposter = [10.0, 11.0, 12.0, 13.0];
        let mut plan = MaskPlan::from_spans(5, Modality::Visual, &[(1, 3)]).unwrap();
        plan.offsets = vec![Some(0)];
        let c = corrupt_visual(&frames, 1, &plan, Some(&imposter), VisualMode::SubSeg, 0).unwrap();
        assert_eq!(c.frames, vec![0.0, 10.0, 11.0, 3.0, 4.0]);
        assert!(c.learned.iter().all(|&f| !f));
    }

    #[test]
    fn empty_plan_is_identity_in_every_mode() {
        let frames: Vec<f32> = (0..12).map(|v| v as f32 / 12.0).collect();
        let plan = MaskPlan::empty(6, Modality::Visual);
        for mode in [VisualMode::SubSeg, VisualMode::SubFrm, VisualMode::Learned, VisualMode::Gauss] {
            let c = corrupt_visual(&frames, 2, &plan, Some(&frames), mode, 3).unwrap();
            assert_eq!(c.frames, frames);
        }
    }

    #[test]
    fn substitution_requires_imposter() {
        let plan = MaskPlan::from_spans(4, Modality::Visual, &[(0, 1)]).unwrap();
        let err = corrupt_visual(&[0.0; 4], 1, &plan, None, VisualMode::SubFrm, 0).unwrap_err();
        assert!(matches!(err, Error::Param(_)));
    }

    #[test]
    fn gauss_stays_in_range_and_only_touches_spans() {
        let frames = vec![0.25f32; 40];
        let plan = MaskPlan::from_spans(10, Modality::Visual, &[(2, 5)]).unwrap();
        let c = corrupt_visual(&frames, 4, &plan, None, VisualMode::Gauss, 8).unwrap();
        assert!(c.frames.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(&c.frames[..8], &frames[..8]);
        assert_eq!(&c.frames[20..], &frames[20..]);
        assert_ne!(&c.frames[8..20], &frames[8..20]);
    }

    #[test]
    fn audio_flags_follow_spans() {
        let plan = MaskPlan::from_spans(6, Modality::Audio, &[(0, 6)]).unwrap();
        let (f, flags) = corrupt_audio(&[1.0; 12], 2, &plan).unwrap();
        assert_eq!(f, vec![1.0; 12]);
        assert!(flags.iter().all(|&b| b));
        let (_, none) = corrupt_audio(&[1.0; 12], 2, &MaskPlan::empty(6, Modality::Audio)).unwrap();
        assert!(none.iter().all(|&b| !b));
        assert!(corrupt_audio(&[1.0; 12], 2, &MaskPlan::empty(6, Modality::Visual)).is_err());
    }

    #[test]
    fn plan_serializes() {
        let mut plan = sample_spans(30, 0.2, 4, Modality::Visual, 5).unwrap();
        assign_offsets(&mut plan, 30, true, 6);
        let json = serde_json::to_string(&plan).unwrap();
        assert_eq!(serde_json::from_str::<MaskPlan>(&json).unwrap(), plan);
    }
}
