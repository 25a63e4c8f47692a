use serde::{Deserialize, Serialize};

use super::FeatureSequence;
use crate::error::{Error, Result};

/// Per-dimension zero-mean, unit-variance scaling fitted over a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Standardizer {
    pub fn fit<'a>(seqs: impl IntoIterator<Item = &'a FeatureSequence>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut n = 0usize;
        for s in seqs {
            if sum.is_empty() {
                sum = vec![0.0; s.dim()];
                sq = vec![0.0; s.dim()];
            } else if s.dim() != sum.len() {
                return Err(Error::Param(format!("dimension {} differs from {}", s.dim(), sum.len())));
            }
            for row in s.data().chunks_exact(s.dim()) {
                for (j, &v) in row.iter().enumerate() {
                    sum[j] += v as f64;
                    sq[j] += (v as f64) * (v as f64);
                }
            }
            n += s.frames();
        }
        if n == 0 {
            return Err(Error::Param("cannot standardize zero frames".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| ((q / n as f64 - m * m).max(0.0).sqrt().max(1e-5)) as f32)
            .collect();
        Ok(Self {
            mean: mean.into_iter().map(|m| m as f32).collect(),
            std,
        })
    }

    pub fn apply(&self, s: &FeatureSequence) -> Result<FeatureSequence> {
        if s.dim() != self.mean.len() {
            return Err(Error::Param(format!("dimension {} differs from {}", s.dim(), self.mean.len())));
        }
        let data = s
            .data()
            .chunks_exact(s.dim())
            .flat_map(|row| row.iter().zip(self.mean.iter().zip(&self.std)).map(|(v, (m, sd))| (v - m) / sd))
            .collect();
        FeatureSequence::new(data, s.dim(), s.rate, s.kind)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureKind;

    #[test]
    fn standardized_columns() {
        let a = FeatureSequence::new(vec![1.0, 10.0, 3.0, 10.0], 2, 25, FeatureKind::Hog).unwrap();
        let b = FeatureSequence::new(vec![5.0, 10.0], 2, 25, FeatureKind::Hog).unwrap();
        let s = Standardizer::fit([&a, &b]).unwrap();
        assert_eq!(s.mean, vec![3.0, 10.0]);
        let z = s.apply(&a).unwrap();
        let sd = (8.0f32 / 3.0).sqrt();
        assert!((z.data()[0] + 2.0 / sd).abs() < 1e-6);
        assert_eq!(z.data()[1], 0.0);
    }
}
