use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clusterlab::{KmeansConfig, TargetSource};
use crate::error::{Error, IoContext, Result};
use crate::model::ModelConfig;

use super::config::{IterationPlan, Variant};
use super::run::TrainLog;

pub const RUN_FILE: &str = "run.json";
pub const METRICS_HEADER: [&str; 7] = ["iteration", "layer", "K", "purity", "nmi", "train_loss", "val_loss"];

/// One iteration of a pretraining run. Paths are relative to the run
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub source: TargetSource,
    /// Checkpoint whose features were clustered; none for hand features.
    pub source_checkpoint: Option<String>,
    pub k: usize,
    pub layer: Option<usize>,
    pub purity: f64,
    pub nmi: f64,
    /// Mean loss over the last tenth of the updates.
    pub train_loss: Option<f64>,
    /// Validation loss of the selected checkpoint.
    pub val_loss: Option<f64>,
    pub codebook: String,
    pub targets: String,
    pub checkpoint: String,
    pub best_checkpoint: String,
    /// Best checkpoint of the feature-source model when it differs from
    /// the trained one.
    pub sub_checkpoint: Option<String>,
    pub loss_curve: String,
}

fn opt(v: Option<impl ToString>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl IterationRecord {
    fn row(&self) -> [String; 7] {
        [
            self.iteration.to_string(),
            opt(self.layer),
            self.k.to_string(),
            self.purity.to_string(),
            self.nmi.to_string(),
            opt(self.train_loss),
            opt(self.val_loss),
        ]
    }

    pub fn write_metrics(&self, path: &Path) -> Result<()> {
        write_rows(path, std::iter::once(self.row()))
    }

    /// The checkpoint whose features the next iteration clusters.
    pub fn feature_source(&self) -> &str {
        self.sub_checkpoint.as_deref().unwrap_or(&self.best_checkpoint)
    }

    fn artifacts(&self) -> Vec<&str> {
        let mut v = vec![
            self.codebook.as_str(),
            self.targets.as_str(),
            self.checkpoint.as_str(),
            self.best_checkpoint.as_str(),
            self.loss_curve.as_str(),
        ];
        v.extend(self.sub_checkpoint.as_deref());
        v
    }
}

fn write_rows(path: &Path, rows: impl Iterator<Item = [String; 7]>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush().at(path)?;
    Ok(())
}

/// A pretraining run: configuration, seeds and per-iteration artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub variant: Variant,
    pub seed: u64,
    pub corpus_hash: String,
    pub model: ModelConfig,
    pub plan: IterationPlan,
    pub kmeans: KmeansConfig,
    pub iterations: Vec<IterationRecord>,
}

impl RunRecord {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).at(path)
    }

    pub fn write_metrics(&self, path: &Path) -> Result<()> {
        write_rows(path, self.iterations.iter().map(IterationRecord::row))
    }

    /// Checks that every referenced artifact exists, that metrics are
    /// finite, and that each iteration's targets come from the previous
    /// iteration's feature source.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        let missing: Vec<PathBuf> = self
            .iterations
            .iter()
            .flat_map(|it| it.artifacts())
            .map(|p| dir.join(p))
            .filter(|p| !p.is_file())
            .collect();
        if !missing.is_empty() {
            return Err(Error::Missing(missing));
        }
        for (i, it) in self.iterations.iter().enumerate() {
            let n = i + 1;
            let finite = [Some(it.purity), Some(it.nmi), it.train_loss, it.val_loss]
                .iter()
                .flatten()
                .all(|v| v.is_finite());
            if it.iteration != n || !finite {
                return Err(Error::Format(format!("iteration record {n} is inconsistent or has non-finite metrics")));
            }
            let expected = match i {
                0 => (0, None),
                _ => (n - 1, Some(self.iterations[i - 1].feature_source())),
            };
            if (it.source.iteration, it.source_checkpoint.as_deref()) != expected {
                return Err(Error::Format(format!(
                    "iteration {n} targets come from iteration {} ({:?}), expected {:?}",
                    it.source.iteration, it.source_checkpoint, expected
                )));
            }
        }
        Ok(())
    }
}

/// Reads and verifies a run directory.
pub fn load_run(dir: &Path) -> Result<RunRecord> {
    let path = dir.join(RUN_FILE);
    if !path.is_file() {
        return Err(Error::Missing(vec![path]));
    }
    let text = std::fs::read_to_string(&path).at(&path)?;
    let record: RunRecord = serde_json::from_str(&text)?;
    record.verify(dir)?;
    Ok(record)
}

pub fn write_loss_curve(path: &Path, log: &TrainLog) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "train_loss", "val_loss"])?;
    let mut val = log.val_scores.iter().peekable();
    for &(step, loss) in &log.losses {
        let v = match val.peek() {
            Some(&&(s, v)) if s == step => {
                val.next();
                v.to_string()
            }
            _ => String::new(),
        };
        w.write_record([step.to_string(), loss.to_string(), v])?;
    }
    for &(s, v) in val {
        w.write_record([s.to_string(), String::new(), v.to_string()])?;
    }
    w.flush().at(path)?;
    Ok(())
}
