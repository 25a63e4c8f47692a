//! Acoustic and visual front-end features: log mel filterbank energies,
//! 4-frame stacking, MFCC with derivatives, and HoG descriptors.

mod container;
mod normalize;

pub use container::{decode_features, encode_features, load_features, save_features};
pub use normalize::Standardizer;

use std::f32::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex32;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthcorpus::Utterance;

pub const FFT_SIZE: usize = 512;
pub const WINDOW: usize = 400;
pub const HOP: usize = 160;
pub const N_MELS: usize = 26;
pub const N_CEPS: usize = 13;
pub const LOG_FLOOR: f32 = 1e-10;
pub const HOG_BINS: usize = 9;
pub const HOG_CELL: usize = 4;
pub const HOG_EPS: f32 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    /// Raw 26-d log filterbank at 100 Hz.
    Fbank,
    /// Four stacked filterbank frames at 25 Hz.
    Fbank104,
    Mfcc39,
    Hog,
    ModelLayer,
}

impl FeatureKind {
    pub fn tag(self) -> u8 {
        match self {
            FeatureKind::Fbank => 0,
            FeatureKind::Fbank104 => 1,
            FeatureKind::Mfcc39 => 2,
            FeatureKind::Hog => 3,
            FeatureKind::ModelLayer => 4,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => FeatureKind::Fbank,
            1 => FeatureKind::Fbank104,
            2 => FeatureKind::Mfcc39,
            3 => FeatureKind::Hog,
            4 => FeatureKind::ModelLayer,
            _ => return None,
        })
    }
}

/// Row-major `[frames x dim]` matrix with a frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    data: Vec<f32>,
    frames: usize,
    dim: usize,
    pub rate: u16,
    pub kind: FeatureKind,
}

impl FeatureSequence {
    pub fn new(data: Vec<f32>, dim: usize, rate: u16, kind: FeatureKind) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::Param(format!("{} values do not form rows of {dim}", data.len())));
        }
        if rate != 25 && rate != 100 {
            return Err(Error::Param(format!("frame rate {rate} not in {{25, 100}}")));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Param(format!("non-finite feature at row {}", i / dim)));
        }
        Ok(Self {
            frames: data.len() / dim,
            data,
            dim,
            rate,
            kind,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    /// Extends to `frames` rows by repeating the last row, or truncates.
    pub fn fit_frames(mut self, frames: usize) -> Self {
        if frames <= self.frames {
            self.data.truncate(frames * self.dim);
        } else if self.frames > 0 {
            let last = self.row(self.frames - 1).to_vec();
            for _ in self.frames..frames {
                self.data.extend_from_slice(&last);
            }
        } else {
            self.data.resize(frames * self.dim, 0.0);
        }
        self.frames = frames;
        self
    }
}

fn hz_to_mel(f: f32) -> f32 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f32) -> f32 {
    700.0 * (10f32.powf(m / 2595.0) - 1.0)
}

/// Triangular filter edges in Hz: `N_MELS + 2` points equally spaced in mel
/// over `[0, sample_rate / 2]`.
pub fn mel_edges(sample_rate: usize) -> Vec<f32> {
    let hi = hz_to_mel(sample_rate as f32 / 2.0);
    (0..N_MELS + 2)
        .map(|i| mel_to_hz(hi * i as f32 / (N_MELS + 1) as f32))
        .collect()
}

struct MelBank {
    /// Per filter, the first FFT bin and its weights.
    filters: Vec<(usize, Vec<f32>)>,
}

impl MelBank {
    fn new(sample_rate: usize) -> Self {
        let edges = mel_edges(sample_rate);
        let bin_hz = sample_rate as f32 / FFT_SIZE as f32;
        let filters = (0..N_MELS)
            .map(|m| {
                let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
                let first = (lo / bin_hz).floor() as usize;
                let last = ((hi / bin_hz).ceil() as usize).min(FFT_SIZE / 2);
                let w = (first..=last)
                    .map(|k| {
                        let f = k as f32 * bin_hz;
                        if f <= lo || f >= hi {
                            0.0
                        } else if f <= c {
                            (f - lo) / (c - lo)
                        } else {
                            (hi - f) / (hi - c)
                        }
                    })
                    .collect();
                (first, w)
            })
            .collect();
        Self { filters }
    }
}

/// Frame count of a wave of `n` samples: `ceil((n - 400) / 160) + 1`. The
/// final frame is zero-padded past the end of the wave.
pub fn fbank_frames(n: usize) -> usize {
    (n - WINDOW).div_ceil(HOP) + 1
}

fn check_wave(wave: &[f32], sample_rate: usize) -> Result<()> {
    if sample_rate != 16_000 {
        return Err(Error::Param(format!("sample rate must be 16000, got {sample_rate}")));
    }
    if wave.len() < WINDOW {
        return Err(Error::Param(format!(
            "wave of {} samples is shorter than one {WINDOW}-sample window",
            wave.len()
        )));
    }
    Ok(())
}

fn log_mel(wave: &[f32], sample_rate: usize) -> Result<Vec<f32>> {
    check_wave(wave, sample_rate)?;
    let frames = fbank_frames(wave.len());
    let bank = MelBank::new(sample_rate);
    let fft: Arc<dyn Fft<f32>> = FftPlanner::new().plan_fft_forward(FFT_SIZE);
    let hann: Vec<f32> = (0..WINDOW)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f32 / (WINDOW - 1) as f32).cos())
        .collect();
    let mut buf = vec![Complex32::new(0.0, 0.0); FFT_SIZE];
    let mut power = vec![0f32; FFT_SIZE / 2 + 1];
    let mut out = Vec::with_capacity(frames * N_MELS);
    for f in 0..frames {
        let start = f * HOP;
        for (i, slot) in buf.iter_mut().enumerate() {
            let x = if i < WINDOW {
                wave.get(start + i).copied().unwrap_or(0.0) * hann[i]
            } else {
                0.0
            };
            *slot = Complex32::new(x, 0.0);
        }
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr();
        }
        for (first, w) in &bank.filters {
            let e: f32 = w.iter().zip(&power[*first..]).map(|(a, b)| a * b).sum();
            out.push(e.max(LOG_FLOOR).ln());
        }
    }
    Ok(out)
}

/// 26-d log mel filterbank energies at 100 Hz.
pub fn logfbank(wave: &[f32], sample_rate: usize) -> Result<FeatureSequence> {
    let data = log_mel(wave, sample_rate)?;
    FeatureSequence::new(data, N_MELS, 100, FeatureKind::Fbank)
}

/// Concatenates input frames `4t..4t+3` into output frame `t`, dropping a
/// remainder of fewer than four frames.
pub fn stack4(fbank: &FeatureSequence) -> Result<FeatureSequence> {
    if fbank.kind != FeatureKind::Fbank {
        return Err(Error::Param(format!("stack4 expects fbank input, got {:?}", fbank.kind)));
    }
    let out_frames = fbank.frames() / 4;
    let data = fbank.data()[..out_frames * 4 * fbank.dim()].to_vec();
    FeatureSequence::new(data, fbank.dim() * 4, 25, FeatureKind::Fbank104)
}

/// Orthonormal DCT-II of each row, keeping the first `N_CEPS` coefficients.
fn dct_ceps(log_mel: &[f32]) -> Vec<f32> {
    let n = N_MELS as f32;
    let basis: Vec<f32> = (0..N_CEPS)
        .flat_map(|k| {
            let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            (0..N_MELS).map(move |m| scale * (PI * k as f32 * (m as f32 + 0.5) / n).cos())
        })
        .collect();
    log_mel
        .chunks_exact(N_MELS)
        .flat_map(|row| {
            basis
                .chunks_exact(N_MELS)
                .map(|b| b.iter().zip(row).map(|(x, y)| x * y).sum::<f32>())
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Regression deltas over a +-2 frame window with edge replication:
/// `d_t = sum_n n (c_{t+n} - c_{t-n}) / (2 sum_n n^2)`.
pub fn deltas(data: &[f32], dim: usize) -> Vec<f32> {
    let frames = data.len() / dim;
    let at = |t: isize, j: usize| data[(t.clamp(0, frames as isize - 1) as usize) * dim + j];
    let mut out = Vec::with_capacity(data.len());
    for t in 0..frames as isize {
        for j in 0..dim {
            let num: f32 = (1..=2).map(|n| n as f32 * (at(t + n, j) - at(t - n, j))).sum();
            out.push(num / 10.0);
        }
    }
    out
}

/// 13 cepstra (c0..c12) with first and second regression deltas at 100 Hz.
pub fn mfcc39(wave: &[f32], sample_rate: usize) -> Result<FeatureSequence> {
    let ceps = dct_ceps(&log_mel(wave, sample_rate)?);
    let d1 = deltas(&ceps, N_CEPS);
    let d2 = deltas(&d1, N_CEPS);
    let mut data = Vec::with_capacity(ceps.len() * 3);
    for t in 0..ceps.len() / N_CEPS {
        let r = t * N_CEPS..(t + 1) * N_CEPS;
        data.extend_from_slice(&ceps[r.clone()]);
        data.extend_from_slice(&d1[r.clone()]);
        data.extend_from_slice(&d2[r]);
    }
    FeatureSequence::new(data, 3 * N_CEPS, 100, FeatureKind::Mfcc39)
}

/// HoG descriptor of one image: central-difference gradients (clamped at
/// the border), `HOG_BINS` unsigned orientation bins over [0, 180) degrees
/// with magnitude voting, one histogram per `HOG_CELL` square cell, each
/// normalized as `v / sqrt(|v|^2 + eps^2)`.
pub fn hog_image(img: &[f32], h: usize, w: usize) -> Result<Vec<f32>> {
    if img.len() != h * w || h % HOG_CELL != 0 || w % HOG_CELL != 0 || h == 0 || w == 0 {
        return Err(Error::Param(format!(
            "image of {} pixels as {h}x{w} is not a whole number of {HOG_CELL}x{HOG_CELL} cells",
            img.len()
        )));
    }
    let (cy, cx) = (h / HOG_CELL, w / HOG_CELL);
    let mut hist = vec![0f32; cy * cx * HOG_BINS];
    let px = |y: usize, x: usize| img[y * w + x];
    for y in 0..h {
        for x in 0..w {
            let gx = px(y, (x + 1).min(w - 1)) - px(y, x.saturating_sub(1));
            let gy = px((y + 1).min(h - 1), x) - px(y.saturating_sub(1), x);
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let mut angle = gy.atan2(gx).to_degrees();
            if angle < 0.0 {
                angle += 180.0;
            }
            let bin = ((angle / (180.0 / HOG_BINS as f32)) as usize).min(HOG_BINS - 1);
            let bin = if angle >= 180.0 { 0 } else { bin };
            hist[((y / HOG_CELL) * cx + x / HOG_CELL) * HOG_BINS + bin] += mag;
        }
    }
    for cell in hist.chunks_exact_mut(HOG_BINS) {
        let norm = (cell.iter().map(|v| v * v).sum::<f32>() + HOG_EPS * HOG_EPS).sqrt();
        for v in cell {
            *v /= norm;
        }
    }
    Ok(hist)
}

/// HoG of every frame at 25 Hz.
pub fn hog(frames: &[f32], h: usize, w: usize) -> Result<FeatureSequence> {
    let n = h * w;
    if n == 0 || frames.len() % n != 0 {
        return Err(Error::Param(format!("{} pixels do not form {h}x{w} frames", frames.len())));
    }
    let mut data = Vec::with_capacity(frames.len() / n * (n / (HOG_CELL * HOG_CELL)) * HOG_BINS);
    for img in frames.chunks_exact(n) {
        data.extend(hog_image(img, h, w)?);
    }
    let dim = (h / HOG_CELL) * (w / HOG_CELL) * HOG_BINS;
    FeatureSequence::new(data, dim, 25, FeatureKind::Hog)
}

/// 4-frame majority vote from 100 Hz to 25 Hz labels; ties go to the label
/// seen first in the block.
pub fn align_labels_25hz(labels: &[u16]) -> Vec<u16> {
    labels
        .chunks_exact(4)
        .map(|block| {
            let mut best = block[0];
            let mut best_count = 0;
            for &c in block {
                let count = block.iter().filter(|&&x| x == c).count();
                if count > best_count {
                    best = c;
                    best_count = count;
                }
            }
            best
        })
        .collect()
}

/// Stacked filterbank of an utterance, one row per video frame.
///
/// A wave of `640 T` samples yields `4T - 1` filterbank frames; the last
/// frame is repeated so that stacking gives exactly `T` rows.
pub fn utterance_fbank104(u: &Utterance) -> Result<FeatureSequence> {
    let fb = logfbank(&u.wave, crate::synthcorpus::SAMPLE_RATE)?.fit_frames(4 * u.num_frames());
    stack4(&fb)
}

/// MFCC of an utterance padded to `4T` frames at 100 Hz.
pub fn utterance_mfcc(u: &Utterance) -> Result<FeatureSequence> {
    Ok(mfcc39(&u.wave, crate::synthcorpus::SAMPLE_RATE)?.fit_frames(4 * u.num_frames()))
}

pub fn utterance_hog(u: &Utterance) -> Result<FeatureSequence> {
    hog(&u.frames, u.height, u.width)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silence_hits_the_floor() {
        let fb = logfbank(&vec![0.0; 1600], 16_000).unwrap();
        assert!(fb.data().iter().all(|&v| v == LOG_FLOOR.ln()));
    }

    #[test]
    fn one_second_frame_count() {
        let fb = logfbank(&vec![0.1; 16_000], 16_000).unwrap();
        assert_eq!(fb.frames(), (16_000 - 400usize).div_ceil(160) + 1);
        assert_eq!(fb.frames(), 99);
        assert_eq!(fb.dim(), 26);
        assert_eq!(fb.rate, 100);
    }

    #[test]
    fn short_wave_and_bad_rate_rejected() {
        assert!(matches!(logfbank(&[0.0; 399], 16_000), Err(Error::Param(_))));
        assert!(logfbank(&[0.0; 1000], 8_000).is_err());
        assert!(mfcc39(&[0.0; 10], 16_000).is_err());
    }

    #[test]
    fn tone_peaks_in_its_mel_band() {
        let wave: Vec<f32> = (0..4000).map(|n| (2.0 * PI * 1000.0 * n as f32 / 16_000.0).sin()).collect();
        let fb = logfbank(&wave, 16_000).unwrap();
        // oracle: the filter whose triangle has the largest response at 1 kHz
        let edges = mel_edges(16_000);
        let response = |m: usize| {
            let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let f = 1000.0;
            if f <= lo || f >= hi { 0.0 } else if f <= c { (f - lo) / (c - lo) } else { (hi - f) / (hi - c) }
        };
        let expected = (0..N_MELS).max_by(|&a, &b| response(a).total_cmp(&response(b))).unwrap();
        for t in 0..fb.frames() {
            let row = fb.row(t);
            let arg = (0..N_MELS).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(arg, expected, "frame {t}");
        }
    }

    #[test]
    fn stack4_layout() {
        let data: Vec<f32> = (0..9 * 26).map(|v| v as f32).collect();
        let fb = FeatureSequence::new(data.clone(), 26, 100, FeatureKind::Fbank).unwrap();
        let s = stack4(&fb).unwrap();
        assert_eq!((s.frames(), s.dim(), s.rate), (2, 104, 25));
        assert_eq!(&s.row(0)[26..52], &data[26..52]);
        let eight = FeatureSequence::new(data[..8 * 26].to_vec(), 26, 100, FeatureKind::Fbank).unwrap();
        assert_eq!(stack4(&eight).unwrap().frames(), 2);
        let wrong = FeatureSequence::new(vec![0.0; 39 * 4], 39, 100, FeatureKind::Mfcc39).unwrap();
        assert!(stack4(&wrong).is_err());
    }

    #[test]
    fn constant_signal_has_zero_deltas() {
        let m = mfcc39(&vec![0.3; 8000], 16_000).unwrap();
        assert_eq!(m.dim(), 39);
        // every frame but the zero-padded tail is identical
        let full = m.frames() - 1;
        for t in 0..full {
            assert_eq!(m.row(t)[..13], m.row(0)[..13]);
        }
        let c = deltas(&vec![1.5; 50 * 13], 13);
        assert!(c.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ramp_delta_equals_slope() {
        let ramp: Vec<f32> = (0..20).map(|t| 0.5 * t as f32 + 3.0).collect();
        let d = deltas(&ramp, 1);
        for t in 2..18 {
            assert!((d[t] - 0.5).abs() < 1e-6, "{t}: {}", d[t]);
        }
        // edge replication shrinks the slope at the ends
        assert!((d[0] - (1.0 * 0.5 + 2.0 * 1.0) / 10.0).abs() < 1e-6);
    }

    #[test]
    fn hog_dimensions_and_constant() {
        let h = hog(&vec![0.4; 3 * 256], 16, 16).unwrap();
        assert_eq!((h.frames(), h.dim()), (3, 144));
        assert!(h.data().iter().all(|&v| v == 0.0));
        assert!(hog(&vec![0.0; 250], 16, 16).is_err());
        assert!(hog(&vec![0.0; 15 * 15], 15, 15).is_err());
    }

    #[test]
    fn vertical_edge_votes_horizontal_gradient() {
        let img: Vec<f32> = (0..256).map(|i| if i % 16 < 8 { 0.0 } else { 1.0 }).collect();
        let d = hog_image(&img, 16, 16).unwrap();
        let mut per_bin = [0f32; HOG_BINS];
        for cell in d.chunks_exact(HOG_BINS) {
            for (b, v) in cell.iter().enumerate() {
                per_bin[b] += v;
            }
        }
        let total: f32 = per_bin.iter().sum();
        assert!(per_bin[0] / total > 0.99, "{per_bin:?}");
    }

    #[test]
    fn hog_is_brightness_invariant() {
        let img: Vec<f32> = (0..256).map(|i| ((i * 37 % 101) as f32) / 200.0).collect();
        let shifted: Vec<f32> = img.iter().map(|v| v + 0.1).collect();
        let (a, b) = (hog_image(&img, 16, 16).unwrap(), hog_image(&shifted, 16, 16).unwrap());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-4);
        }
    }

    #[test]
    fn majority_alignment() {
        assert_eq!(align_labels_25hz(&[1, 1, 1, 1, 2, 2, 2, 2]), vec![1, 2]);
        assert_eq!(align_labels_25hz(&[1, 1, 2, 2]), vec![1]);
        assert_eq!(align_labels_25hz(&[2, 1, 1, 2]), vec![2]);
        assert_eq!(align_labels_25hz(&[3, 1, 2, 1]), vec![1]);
        assert_eq!(align_labels_25hz(&[0; 9]).len(), 2);
    }

    #[test]
    fn utterance_features_match_video_frames() {
        let inv = crate::synthcorpus::build_inventory(12, 8, 40, 1).unwrap();
        let u = crate::synthcorpus::synth_utterance(&inv, &[0, 1], 0, &Default::default(), 2).unwrap();
        let t = u.num_frames();
        assert_eq!(utterance_fbank104(&u).unwrap().frames(), t);
        assert_eq!(utterance_mfcc(&u).unwrap().frames(), 4 * t);
        assert_eq!(utterance_hog(&u).unwrap().frames(), t);
        assert_eq!(logfbank(&u.wave, 16_000).unwrap().frames(), 4 * t - 1);
    }

    #[test]
    fn non_finite_rejected() {
        assert!(FeatureSequence::new(vec![f32::NAN, 0.0], 2, 25, FeatureKind::Hog).is_err());
        assert!(FeatureSequence::new(vec![0.0; 4], 2, 50, FeatureKind::Hog).is_err());
    }
}
