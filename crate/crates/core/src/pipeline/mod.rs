//! Training, fusion, evaluation, benchmarking and ablation runs.

mod ablation;
mod config;
mod fuse;
mod manifest;
mod optim;
mod trainer;

pub use ablation::{ablate, arm_configs, config_diff, AblationArm, AblationReport, ARMS};
pub use config::{AblationFlags, AdamConfig, LrSchedule, TrainConfig};
pub use fuse::{
    benchmark_fusion_time, evaluate, fuse_pipeline, save_fusion_output, EvalOptions, FusionOutput,
    Latents, TimingReport, BENCHMARK_MIN_PAIRS, BENCHMARK_WARMUP,
};
pub use manifest::RunManifest;
pub use optim::Adam;
pub use trainer::{
    resume_stage1, train_stage1, Checkpoints, EpochSummary, StepRecord, TrainOutcome, TrainState, Trainer,
};
