use std::path::Path;

use super::{FeatureKind, FeatureSequence};
use crate::bytes::Reader;
use crate::error::{Error, IoContext, Result};

const MAGIC: &[u8; 4] = b"AVF1";

/// AVF1 layout: magic, kind u8, rate u16, T u32, D u32, then `T x D` f32
/// values row-major, all little-endian.
pub fn encode_features(f: &FeatureSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(15 + 4 * f.data().len());
    out.extend_from_slice(MAGIC);
    out.push(f.kind.tag());
    out.extend_from_slice(&f.rate.to_le_bytes());
    out.extend_from_slice(&(f.frames() as u32).to_le_bytes());
    out.extend_from_slice(&(f.dim() as u32).to_le_bytes());
    for v in f.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureSequence> {
    let mut r = Reader::new(bytes, "AVF1");
    r.magic(MAGIC)?;
    let tag = r.u8()?;
    let kind = FeatureKind::from_tag(tag).ok_or_else(|| Error::Format(format!("AVF1: unknown kind tag {tag}")))?;
    let rate = r.u16()?;
    let t = r.u32()? as usize;
    let d = r.u32()? as usize;
    if d == 0 {
        return Err(Error::Format("AVF1: zero feature dimension".into()));
    }
    let data = r.f32s(t.checked_mul(d).ok_or_else(|| r.overflow())?)?;
    r.finish()?;
    FeatureSequence::new(data, d, rate, kind).map_err(|e| Error::Format(format!("AVF1: {e}")))
}

pub fn save_features(path: &Path, f: &FeatureSequence) -> Result<()> {
    std::fs::write(path, encode_features(f)).at(path)
}

pub fn load_features(path: &Path) -> Result<FeatureSequence> {
    decode_features(&std::fs::read(path).at(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_corruption() {
        let f = FeatureSequence::new((0..12).map(|v| v as f32 * 0.5).collect(), 3, 25, FeatureKind::Hog).unwrap();
        let bytes = encode_features(&f);
        assert_eq!(decode_features(&bytes).unwrap(), f);
        let mut bad = bytes.clone();
        bad[4] = 99;
        assert!(matches!(decode_features(&bad), Err(Error::Format(_))));
        assert!(decode_features(&bytes[..bytes.len() - 2]).is_err());
        let mut nan = bytes.clone();
        let n = nan.len();
        nan[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(decode_features(&nan).is_err());
    }
}
