//! Alternation of clustering and masked-prediction training across
//! iterations, CTC fine-tuning and self-training.

mod config;
mod data;
mod finetune;
mod masks;
mod pretrain;
mod record;
mod run;

pub use config::{
    FinetuneConfig, InputMode, IterationPlan, IterationSpec, MaskingConfig, Placement, SpanConfig, Stream, TargetKind,
    TrainConfig, Variant, DEFAULT_K_SCHEDULE,
};
pub use data::{hand_features, load_split, make_batches, pack, prepare, Batcher, Packed, Prepared};
pub use finetune::{
    ctc_validation_loss, evaluate, finetune, phone_error_rate, pseudo_label, self_train, Evaluation, UttScore,
};
pub use masks::{mask_batch, BatchMasks};
pub use pretrain::{
    cluster_items, iterative_pretrain, model_features, pretrain_iteration, target_quality, validation_loss,
};
pub use record::{load_run, write_loss_curve, IterationRecord, RunRecord, METRICS_HEADER, RUN_FILE};
pub use run::{TrainLog, Trained};
