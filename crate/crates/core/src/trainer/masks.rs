use crate::error::Result;
use crate::masking::{assign_offsets, corrupt_audio, corrupt_visual, sample_spans, Modality};
use crate::seed;

use super::config::{MaskingConfig, Placement};

/// Masks of a packed batch, one flag per row.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchMasks {
    /// Corrupted video when input-level masking changed any pixels.
    pub video: Option<Vec<f32>>,
    pub audio_mask: Option<Vec<bool>>,
    pub video_mask: Option<Vec<bool>>,
    pub fused_mask: Option<Vec<bool>>,
    /// Rows that count as masked in the loss.
    pub masked: Vec<bool>,
}

/// Draws the masks of a batch. Imposter segments for video substitution come
/// from the next sequence of the batch (cyclically) unless same-sequence
/// substitution is configured or the batch holds a single sequence.
pub fn mask_batch(lengths: &[usize], video: &[f32], pixels: usize, cfg: &MaskingConfig, seed: u64) -> Result<BatchMasks> {
    let rows: usize = lengths.iter().sum();
    let starts: Vec<usize> = lengths
        .iter()
        .scan(0, |acc, &l| {
            let s = *acc;
            *acc += l;
            Some(s)
        })
        .collect();
    let mut masked = Vec::with_capacity(rows);
    match cfg.placement {
        Placement::Feature => {
            for (j, &len) in lengths.iter().enumerate() {
                let plan = sample_spans(len, cfg.feature.p, cfg.feature.l, Modality::Fused, seed::substream_idx(seed, "fused-mask", j as u64))?;
                masked.extend(plan.flags());
            }
            Ok(BatchMasks {
                video: None,
                audio_mask: None,
                video_mask: None,
                fused_mask: Some(masked.clone()),
                masked,
            })
        }
        Placement::Input => {
            let mut out_video = Vec::with_capacity(video.len());
            let mut audio_mask = Vec::with_capacity(rows);
            let mut video_mask = Vec::with_capacity(rows);
            let n = lengths.len();
            for (j, &len) in lengths.iter().enumerate() {
                let own = &video[starts[j] * pixels..(starts[j] + len) * pixels];
                let a = sample_spans(len, cfg.audio.p, cfg.audio.l, Modality::Audio, seed::substream_idx(seed, "audio-mask", j as u64))?;
                let mut v = sample_spans(len, cfg.video.p, cfg.video.l, Modality::Visual, seed::substream_idx(seed, "video-mask", j as u64))?;
                let same = cfg.same_sequence || n == 1;
                let imposter = if same {
                    own
                } else {
                    let k = (j + 1) % n;
                    &video[starts[k] * pixels..(starts[k] + lengths[k]) * pixels]
                };
                assign_offsets(&mut v, imposter.len() / pixels, same, seed::substream_idx(seed, "offsets", j as u64));
                let c = corrupt_visual(own, pixels, &v, Some(imposter), cfg.visual_mode, seed::substream_idx(seed, "corrupt", j as u64))?;
                // audio masking is always feature-level, the values stay put
                let (_, a_flags) = corrupt_audio(&vec![0.0; len], 1, &a)?;
                masked.extend(a_flags.iter().zip(v.flags()).map(|(&x, y)| x || y));
                audio_mask.extend(a_flags);
                video_mask.extend(c.learned);
                out_video.extend(c.frames);
            }
            Ok(BatchMasks {
                video: Some(out_video),
                audio_mask: Some(audio_mask),
                video_mask: Some(video_mask),
                fused_mask: None,
                masked,
            })
        }
    }
}
