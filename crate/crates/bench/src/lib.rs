//! Shared fixtures for the criterion benchmarks.

use defgen_core::tasks::{self, Dataset, TaskKind};
use defgen_core::training::TrainConfig;

pub fn bench_dataset(count: usize) -> Dataset {
    tasks::generate(TaskKind::Retraction, count, 91).expect("benchmark dataset")
}

pub fn bench_config() -> TrainConfig {
    let mut cfg = TrainConfig::with_epochs(1);
    cfg.seed = 91;
    cfg.fusion_mode = defgen_core::FusionMode::PerLayerGate;
    cfg
}
