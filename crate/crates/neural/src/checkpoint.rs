//! `AVP1` parameter checkpoints.
//!
//! Little-endian layout:
//!
//! ```text
//! "AVP1"  version:u16  header_len:u32  header:[u8; header_len] (UTF-8 JSON)
//! n_params:u32
//! n_params x { name_len:u16 name:[u8] ndim:u8 dims:[u32; ndim] data:[f32] }
//! has_optimizer:u8
//! if has_optimizer: step:u64 beta1:f32 beta2:f32 eps:f32
//!                   n_params x { m:[f32] v:[f32] }   (same order and sizes)
//! ```

use crate::adam::{AdamConfig, AdamState};
use crate::error::{NeuralError, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"AVP1";
const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Free-form JSON header (model configuration, provenance).
    pub header: String,
    pub params: ParamStore<f32>,
    pub optimizer: Option<(AdamConfig, AdamState<f32>)>,
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(ckpt.header.len() as u32).to_le_bytes());
    out.extend_from_slice(ckpt.header.as_bytes());
    out.extend_from_slice(&(ckpt.params.len() as u32).to_le_bytes());
    for (_, name, t) in ckpt.params.iter() {
        let nb = name.as_bytes();
        if nb.len() > u16::MAX as usize || t.shape().len() > u8::MAX as usize {
            return Err(NeuralError::Format(format!("parameter {name} not encodable")));
        }
        out.extend_from_slice(&(nb.len() as u16).to_le_bytes());
        out.extend_from_slice(nb);
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        put_f32s(&mut out, t.data());
    }
    match &ckpt.optimizer {
        None => out.push(0),
        Some((cfg, st)) => {
            if st.m.len() != ckpt.params.len() || st.v.len() != ckpt.params.len() {
                return Err(NeuralError::Format("optimizer/parameter count mismatch".into()));
            }
            out.push(1);
            out.extend_from_slice(&st.step.to_le_bytes());
            for v in [cfg.beta1, cfg.beta2, cfg.eps] {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
            for ((m, v), (_, _, t)) in st.m.iter().zip(&st.v).zip(ckpt.params.iter()) {
                if m.len() != t.len() || v.len() != t.len() {
                    return Err(NeuralError::Format("optimizer moment size mismatch".into()));
                }
                put_f32s(&mut out, m);
                put_f32s(&mut out, v);
            }
        }
    }
    Ok(out)
}

fn put_f32s(out: &mut Vec<u8>, data: &[f32]) {
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(NeuralError::Format(format!(
                "truncated: need {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = n
            .checked_mul(4)
            .ok_or_else(|| NeuralError::Format("size overflow".into()))?;
        Ok(self
            .take(bytes)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(NeuralError::Format("bad magic".into()));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(NeuralError::Format(format!("unsupported version {version}")));
    }
    let hlen = r.u32()? as usize;
    let header = std::str::from_utf8(r.take(hlen)?)
        .map_err(|e| NeuralError::Format(format!("header not UTF-8: {e}")))?
        .to_string();
    let n = r.u32()? as usize;
    let mut params = ParamStore::new();
    for _ in 0..n {
        let nlen = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(nlen)?)
            .map_err(|e| NeuralError::Format(format!("name not UTF-8: {e}")))?
            .to_string();
        let ndim = r.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        let mut count: usize = 1;
        for _ in 0..ndim {
            let d = r.u32()? as usize;
            count = count
                .checked_mul(d)
                .ok_or_else(|| NeuralError::Format("shape overflow".into()))?;
            shape.push(d);
        }
        let data = r.f32s(count)?;
        params
            .add(name, Tensor::new(shape, data)?)
            .map_err(|e| NeuralError::Format(e.to_string()))?;
    }
    let optimizer = match r.u8()? {
        0 => None,
        1 => {
            let step = r.u64()?;
            let mut hp = [0f64; 3];
            for h in &mut hp {
                *h = f32::from_le_bytes(r.take(4)?.try_into().unwrap()) as f64;
            }
            let mut m = Vec::with_capacity(params.len());
            let mut v = Vec::with_capacity(params.len());
            for (_, _, t) in params.iter() {
                m.push(r.f32s(t.len())?);
                v.push(r.f32s(t.len())?);
            }
            let cfg = AdamConfig {
                beta1: hp[0],
                beta2: hp[1],
                eps: hp[2],
            };
            Some((cfg, AdamState { m, v, step }))
        }
        f => return Err(NeuralError::Format(format!("bad optimizer flag {f}"))),
    };
    if r.pos != bytes.len() {
        return Err(NeuralError::Format(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(Checkpoint {
        header,
        params,
        optimizer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut params = ParamStore::new();
        params
            .add("enc.w", Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap())
            .unwrap();
        params.add("enc.b", Tensor::new(vec![3], vec![0.5, -0.5, 0.0]).unwrap()).unwrap();
        let state = AdamState {
            m: vec![vec![0.1; 6], vec![0.2; 3]],
            v: vec![vec![0.3; 6], vec![0.4; 3]],
            step: 17,
        };
        Checkpoint {
            header: r#"{"d":16}"#.into(),
            params,
            optimizer: Some((AdamConfig { beta1: 0.5, beta2: 0.25, eps: 0.125 }, state)),
        }
    }

    #[test]
    fn round_trip() {
        let c = sample();
        let bytes = encode_checkpoint(&c).unwrap();
        assert_eq!(decode_checkpoint(&bytes).unwrap(), c);
    }

    #[test]
    fn corrupt_inputs_are_format_errors() {
        let bytes = encode_checkpoint(&sample()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(NeuralError::Format(_))));
        for cut in [3, 10, bytes.len() - 1] {
            assert!(decode_checkpoint(&bytes[..cut]).is_err());
        }
        let mut extra = bytes;
        extra.push(0);
        assert!(decode_checkpoint(&extra).is_err());
    }
}
