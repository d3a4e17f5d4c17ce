//! Pre-training and fine-tuning: loss assembly, the clipped AdamW
//! optimizer, training loops, and the checkpoint container.

pub mod checkpoint;
pub mod finetune;
pub mod loss;
pub mod optim;
pub mod pretrain;

pub use checkpoint::{
    load_encoder, load_pretrain, load_task, save_pretrain, save_task, CheckpointHeader, HeadSpec,
    ValidationMeta,
};
pub use finetune::{evaluate_task, finetune, FinetuneConfig, FinetuneOutcome};
pub use loss::{pretrain_loss, pretrain_loss_with_grads, LossBreakdown, LossGrads};
pub use optim::{stable_adamw_step, Moments, OptimizerConfig, TrainState};
pub use pretrain::{
    evaluate, make_eval_items, pretrain, split_pieces, EvalItem, EvalStats, MetricRecord,
    PretrainConfig, PretrainOutcome,
};
