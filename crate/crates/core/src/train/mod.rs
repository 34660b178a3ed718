//! Optimization, checkpointing, training loop, linear probing and ablations.

mod ablation;
mod checkpoint;
mod optim;
mod probe;
mod schedule;
mod trainer;

pub use ablation::{default_variants, run_ablation, AblationRow, AblationSummary, AblationVariant};
pub use checkpoint::Checkpoint;
pub use optim::{clip_grad_norm, grad_norm, OptimizerHyper, OptimizerState};
pub use probe::{extract_features, linear_probe, train_linear_head, ProbeConfig, ProbeReport};
pub use schedule::{lr_at, wd_at, ScheduleConfig};
pub use trainer::{
    evaluate, forward_fingerprint, infer, merge_map_for, rank_actors, retrieval_recall, sample_gradients, train, train_model,
    EvalReport, LogRecord, RankedActor, SupervisionMode, TrainOptions, TrainOutcome, ACTION_THRESHOLD,
};
