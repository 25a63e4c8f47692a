use crate::params::{ParamId, ParamStore};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment buffers, one pair per parameter, plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub m: Vec<Vec<F>>,
    pub v: Vec<Vec<F>>,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam<F> {
    pub config: AdamConfig,
    pub state: AdamState<F>,
}

impl<F: Real> Adam<F> {
    pub fn new(config: AdamConfig, params: &ParamStore<F>) -> Self {
        let zeros = || params.iter().map(|(_, _, t)| vec![F::zero(); t.len()]).collect();
        Self {
            config,
            state: AdamState {
                m: zeros(),
                v: zeros(),
                step: 0,
            },
        }
    }

    /// One bias-corrected Adam update. Parameters without a gradient, or for
    /// which `frozen` returns true, are left untouched.
    pub fn step(
        &mut self,
        params: &mut ParamStore<F>,
        grads: &[(ParamId, &[F])],
        lr: f64,
        frozen: impl Fn(ParamId) -> bool,
    ) {
        self.state.step += 1;
        let t = self.state.step as i32;
        let b1 = self.config.beta1;
        let b2 = self.config.beta2;
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        let (b1f, b2f) = (F::from_f64_lossy(b1), F::from_f64_lossy(b2));
        let one = F::one();
        let eps = F::from_f64_lossy(self.config.eps);
        let step_size = F::from_f64_lossy(lr / bc1);
        let bc2_sqrt = F::from_f64_lossy(bc2.sqrt());
        for &(id, g) in grads {
            if frozen(id) {
                continue;
            }
            let m = &mut self.state.m[id.0];
            let v = &mut self.state.v[id.0];
            let p = params.get_mut(id).data_mut();
            for i in 0..p.len() {
                m[i] = b1f * m[i] + (one - b1f) * g[i];
                v[i] = b2f * v[i] + (one - b2f) * g[i] * g[i];
                let denom = v[i].sqrt() / bc2_sqrt + eps;
                p[i] -= step_size * m[i] / denom;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn store(v: f64) -> (ParamStore<f64>, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::new(vec![1], vec![v]).unwrap()).unwrap();
        (s, id)
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let (mut s, id) = store(0.7);
        let mut adam = Adam::new(AdamConfig::default(), &s);
        for _ in 0..5 {
            adam.step(&mut s, &[(id, &[0.0])], 0.01, |_| false);
        }
        assert_eq!(s.get(id).data(), &[0.7]);
    }

    #[test]
    fn first_step_matches_hand_evaluated_recurrence() {
        // m1 = 0.1, v1 = 0.001, mhat = 1, vhat = 1 -> update = -lr / (1 + eps)
        let (mut s, id) = store(0.0);
        let mut adam = Adam::new(AdamConfig::default(), &s);
        adam.step(&mut s, &[(id, &[1.0])], 0.01, |_| false);
        let want = -0.01 / (1.0 + 1e-8);
        assert!((s.get(id).data()[0] - want).abs() < 1e-15);
    }

    #[test]
    fn frozen_parameters_do_not_move() {
        let (mut s, id) = store(1.5);
        let mut adam = Adam::new(AdamConfig::default(), &s);
        adam.step(&mut s, &[(id, &[3.0])], 0.1, |_| true);
        assert_eq!(s.get(id).data(), &[1.5]);
    }
}
