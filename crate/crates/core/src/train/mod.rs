//! Training loop, evaluation metrics and checkpoints.

mod checkpoint;
mod config;
mod metrics;
mod trainer;

pub use checkpoint::{Best, Checkpoint};
pub use config::{Preset, TrainConfig};
pub use metrics::{accuracy, argmax, baseline_mae, mae, EpochRecord, EvalReport, TargetScaler};
pub use trainer::{
    append_record, decode_predictions, evaluate, predict_outputs, prepare_samples, read_metrics_log,
    target_of, Sample, Trainer, BEST_CHECKPOINT, LATEST_CHECKPOINT, METRICS_LOG,
};
