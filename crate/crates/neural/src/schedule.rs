use crate::error::{NeuralError, Result};

/// Linear warmup from 0 to `peak_lr` over the first `warmup_fraction` of
/// updates, then linear decay to 0 at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub peak_lr: f64,
    pub total_steps: usize,
    pub warmup_fraction: f64,
}

impl LrSchedule {
    pub fn new(peak_lr: f64, total_steps: usize, warmup_fraction: f64) -> Result<Self> {
        if !(peak_lr > 0.0) {
            return Err(NeuralError::Param(format!("peak_lr {peak_lr} must be > 0")));
        }
        if !(warmup_fraction > 0.0 && warmup_fraction < 1.0) {
            return Err(NeuralError::Param(format!(
                "warmup_fraction {warmup_fraction} outside (0, 1)"
            )));
        }
        Ok(Self {
            peak_lr,
            total_steps,
            warmup_fraction,
        })
    }

    pub fn lr_at(&self, step: usize) -> Result<f64> {
        if step > self.total_steps {
            return Err(NeuralError::Param(format!(
                "step {step} beyond schedule length {}",
                self.total_steps
            )));
        }
        let total = self.total_steps as f64;
        let warm = self.warmup_fraction * total;
        let s = step as f64;
        if total == 0.0 {
            return Ok(0.0);
        }
        Ok(if s <= warm {
            self.peak_lr * s / warm
        } else {
            self.peak_lr * (total - s) / (total - warm)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_peak() {
        let s = LrSchedule::new(0.002, 1000, 0.08).unwrap();
        assert_eq!(s.lr_at(0).unwrap(), 0.0);
        assert!((s.lr_at(80).unwrap() - 0.002).abs() < 1e-15);
        assert_eq!(s.lr_at(1000).unwrap(), 0.0);
        assert!(s.lr_at(1001).is_err());
    }

    #[test]
    fn warmup_is_monotone_then_decay_is_monotone() {
        let s = LrSchedule::new(0.002, 500, 0.08).unwrap();
        let lrs: Vec<f64> = (0..=500).map(|t| s.lr_at(t).unwrap()).collect();
        assert!(lrs[..=40].windows(2).all(|w| w[0] <= w[1]));
        assert!(lrs[40..].windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn invalid_schedules_rejected() {
        assert!(LrSchedule::new(0.0, 10, 0.1).is_err());
        assert!(LrSchedule::new(0.1, 10, 1.0).is_err());
        assert!(LrSchedule::new(0.1, 10, 0.0).is_err());
    }
}
