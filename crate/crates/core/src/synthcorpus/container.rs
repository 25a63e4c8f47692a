use std::path::Path;

use super::{Utterance, SAMPLES_PER_FRAME};
use crate::bytes::Reader;
use crate::error::{Error, IoContext, Result};

const MAGIC: &[u8; 4] = b"AVU1";
const VERSION: u16 = 1;

/// Serializes an utterance into the AVU1 container.
///
/// After the word ids a `u32` speaker id is appended so that a round trip
/// reproduces every field.
pub fn encode_utterance(u: &Utterance) -> Result<Vec<u8>> {
    let t = u.num_frames();
    let pixels = u.height * u.width;
    if u.frames.len() != t * pixels || u.wave.len() != t * SAMPLES_PER_FRAME {
        return Err(Error::Format(format!(
            "inconsistent utterance: T={t}, {} pixels, {} samples",
            u.frames.len(),
            u.wave.len()
        )));
    }
    let dims_ok = u16::try_from(u.height).is_ok() && u16::try_from(u.width).is_ok();
    if !dims_ok || u32::try_from(t).is_err() || u16::try_from(u.word_seq.len()).is_err() {
        return Err(Error::Format("utterance too large for AVU1".into()));
    }
    let mut out = Vec::with_capacity(20 + 4 * (u.frames.len() + u.wave.len()) + 2 * t);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(t as u32).to_le_bytes());
    out.extend_from_slice(&(u.height as u16).to_le_bytes());
    out.extend_from_slice(&(u.width as u16).to_le_bytes());
    for v in &u.frames {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in &u.wave {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in &u.phone_labels {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(u.word_seq.len() as u16).to_le_bytes());
    for v in &u.word_seq {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&u.speaker_id.to_le_bytes());
    Ok(out)
}

pub fn decode_utterance(bytes: &[u8]) -> Result<Utterance> {
    let mut r = Reader::new(bytes, "AVU1");
    r.magic(MAGIC)?;
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Format(format!("AVU1: unsupported version {version}")));
    }
    let t = r.u32()? as usize;
    let height = r.u16()? as usize;
    let width = r.u16()? as usize;
    let frames = r.f32s(t.checked_mul(height * width).ok_or_else(|| r.overflow())?)?;
    let wave = r.f32s(t.checked_mul(SAMPLES_PER_FRAME).ok_or_else(|| r.overflow())?)?;
    let phone_labels = r.u16s(t)?;
    let n_words = r.u16()? as usize;
    let word_seq = r.u16s(n_words)?;
    let speaker_id = r.u32()?;
    r.finish()?;
    if frames.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::Format("AVU1: pixel outside [0, 1]".into()));
    }
    Ok(Utterance {
        wave,
        frames,
        height,
        width,
        phone_labels,
        word_seq,
        speaker_id,
    })
}

pub fn save_utterance(path: &Path, u: &Utterance) -> Result<()> {
    let bytes = encode_utterance(u)?;
    std::fs::write(path, bytes).at(path)
}

pub fn load_utterance(path: &Path) -> Result<Utterance> {
    let bytes = std::fs::read(path).at(path)?;
    decode_utterance(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthcorpus::{build_inventory, synth_utterance, RenderConfig};

    fn sample(n_frames_hint: usize) -> Utterance {
        let inv = build_inventory(12, 8, 40, 7).unwrap();
        let words: Vec<u16> = (0..n_frames_hint as u16).collect();
        synth_utterance(&inv, &words, 2, &RenderConfig::default(), 3).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let u = sample(3);
        let bytes = encode_utterance(&u).unwrap();
        assert_eq!(decode_utterance(&bytes).unwrap(), u);
    }

    #[test]
    fn round_trip_ten_frames_via_file() {
        let mut u = sample(2);
        u.phone_labels.truncate(10);
        u.frames.truncate(10 * 256);
        u.wave.truncate(10 * SAMPLES_PER_FRAME);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.avu");
        save_utterance(&path, &u).unwrap();
        assert_eq!(load_utterance(&path).unwrap(), u);
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = encode_utterance(&sample(1)).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode_utterance(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn header_claims_more_frames_than_present() {
        let mut u = sample(2);
        u.phone_labels.truncate(4);
        u.frames.truncate(4 * 256);
        u.wave.truncate(4 * SAMPLES_PER_FRAME);
        let mut bytes = encode_utterance(&u).unwrap();
        bytes[6..10].copy_from_slice(&5u32.to_le_bytes());
        assert!(matches!(decode_utterance(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn truncation_and_trailing_bytes_rejected() {
        let bytes = encode_utterance(&sample(1)).unwrap();
        for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(decode_utterance(&bytes[..cut]).is_err(), "cut {cut}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_utterance(&extra).is_err());
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_utterance(Path::new("/nonexistent/u.avu")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
