use avhubert_neural::{Adam, AdamConfig, Graph, LrSchedule, Real, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::AvHubert;
use crate::seed;

use super::config::TrainConfig;
use super::data::Batcher;

/// Loss history of one training stage.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    /// `(step, loss)` for every update, steps counted from 1.
    pub losses: Vec<(usize, f64)>,
    /// `(step, score)` of each validation, lower is better: masked-prediction
    /// loss when pretraining, phone error rate when fine-tuning.
    pub val_scores: Vec<(usize, f64)>,
    /// Step and score of the selected checkpoint.
    pub best: Option<(usize, f64)>,
    /// Batches without a contributing frame.
    pub skipped: usize,
}

impl TrainLog {
    /// Mean loss over the last `n` recorded updates.
    pub fn tail_mean(&self, n: usize) -> Option<f64> {
        let tail = &self.losses[self.losses.len().saturating_sub(n)..];
        (!tail.is_empty()).then(|| tail.iter().map(|(_, l)| l).sum::<f64>() / tail.len() as f64)
    }

    pub fn final_val(&self) -> Option<f64> {
        self.val_scores.last().map(|&(_, v)| v)
    }
}

/// Trained model, the model with the best validation score and the log.
#[derive(Debug, Clone)]
pub struct Trained<F: Real> {
    pub model: AvHubert<F>,
    pub best: AvHubert<F>,
    pub log: TrainLog,
}

/// Adam with a warmup-linear schedule over budgeted batches. `loss` builds
/// the loss of a batch given the step seed; a loss error skips the batch.
/// During the first `frozen_steps` updates only head parameters change.
pub(crate) fn train_loop<F: Real>(
    mut model: AvHubert<F>,
    lengths: Vec<usize>,
    cfg: &TrainConfig,
    seed: u64,
    frozen_steps: usize,
    mut loss: impl FnMut(&AvHubert<F>, &mut Graph<F>, &[usize], u64) -> Result<Var>,
    mut validate: impl FnMut(&AvHubert<F>) -> Result<Option<f64>>,
) -> Result<Trained<F>> {
    cfg.validate()?;
    let mut batcher = Batcher::new(lengths, cfg.frame_budget, seed::substream(seed, "batches"))?;
    let schedule = LrSchedule::new(cfg.peak_lr, cfg.steps, cfg.warmup_fraction)?;
    let mut adam = Adam::new(AdamConfig::default(), &model.params);
    let head: Vec<bool> = model.params.ids().map(|id| model.is_head(id)).collect();
    let mut log = TrainLog::default();
    let mut best = model.clone();
    let mut best_val = f64::INFINITY;
    for step in 1..=cfg.steps {
        let batch = batcher.next_batch();
        let s = seed::substream_idx(seed, "step", step as u64);
        let mut g = Graph::new();
        match loss(&model, &mut g, &batch, s) {
            Ok(l) => {
                let value = g.value(l).data()[0].as_f64();
                if !value.is_finite() {
                    return Err(Error::Loss(format!("non-finite training loss {value} at step {step}")));
                }
                g.backward(l)?;
                let lr = schedule.lr_at(step)?;
                let frozen = step <= frozen_steps;
                adam.step(&mut model.params, &g.param_grads(), lr, |id| frozen && !head[id.0]);
                log.losses.push((step, value));
            }
            Err(Error::Loss(_)) => log.skipped += 1,
            Err(e) => return Err(e),
        }
        if step % cfg.val_every == 0 || step == cfg.steps {
            if let Some(v) = validate(&model)? {
                log.val_scores.push((step, v));
                if v < best_val {
                    best_val = v;
                    best = model.clone();
                    log.best = Some((step, v));
                }
            }
        }
    }
    if cfg.steps == 0 {
        if let Some(v) = validate(&model)? {
            log.val_scores.push((0, v));
            log.best = Some((0, v));
        }
    }
    if log.best.is_none() {
        best = model.clone();
    }
    Ok(Trained { model, best, log })
}
