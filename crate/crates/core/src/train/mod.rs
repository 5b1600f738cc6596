//! One-stage training: data mixing, schedule, optimizer and checkpoints.

pub mod config;
pub mod engine;
pub mod mixture;
pub mod optim;
pub mod schedule;

pub use config::{default_lr_for, SourceSpec, TrainConfig};
pub use engine::{
    load_checkpoint, prepare_records, prepare_sources, save_checkpoint, train_step, LoadedCheckpoint, StepMetrics,
    Trainer, TrainReport,
};
pub use mixture::Mixture;
pub use optim::AdamW;
pub use schedule::{lr_at, warmup_steps};
