#![allow(dead_code)] // items are shared across test binaries with different usage

//! Shared fixtures: micro configurations and toy datasets small enough for
//! fast integration tests.

use defgen_core::cloud::PointCloud;
use defgen_core::rng;
use defgen_core::tasks::{DemoRecord, RetractionScenario, Scenario, ToolSide};
use defgen_core::training::TrainConfig;
use defgen_core::FusionMode;

/// Tiny network and clouds: fast enough for finite differences and short
/// training runs.
pub fn micro_config(epochs: usize, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::with_epochs(epochs);
    cfg.num_points = 16;
    cfg.latent_dim = 8;
    cfg.feature_dim = 8;
    cfg.t_steps = 10;
    cfg.batch = 4;
    cfg.seed = seed;
    cfg
}

pub fn micro_config_mode(epochs: usize, seed: u64, mode: FusionMode) -> TrainConfig {
    let mut cfg = micro_config(epochs, seed);
    cfg.fusion_mode = mode;
    cfg
}

fn blob(center: [f64; 3], spread: f64, n: usize, seed: u64) -> PointCloud {
    let mut r = rng::stream(seed);
    PointCloud::new(
        (0..n)
            .map(|_| {
                let v = rng::normal_vec(&mut r, 3);
                [
                    center[0] + spread * v[0],
                    center[1] + spread * v[1],
                    center[2] + spread * v[2],
                ]
            })
            .collect(),
    )
    .unwrap()
}

fn dummy_scenario() -> Scenario {
    Scenario::Retraction(RetractionScenario {
        diameter: 1.0,
        tool_axis_a: [0.0, 0.5, 0.1],
        tool_axis_b: [0.0, 0.5, 0.5],
        tool_radius: 0.04,
        plane_point: [0.0; 3],
        plane_normal: [1.0, 0.0, 0.0],
        tool_side: ToolSide::Center,
        goal_sides: vec![-1.0, 1.0],
        goal_angles_deg: vec![60.0, 60.0],
    })
}

/// Two well-separated goal modes (blobs at +/- offset) per record, with
/// mild per-record variation in the current cloud.
pub fn two_mode_toy(count: usize, n_points: usize, seed: u64) -> Vec<DemoRecord> {
    (0..count)
        .map(|i| {
            let rs = rng::derive(seed, &[i as u64]);
            let jitter = 0.1 * (i as f64 / count.max(1) as f64);
            DemoRecord {
                id: format!("toy2-s{seed}-{i:03}"),
                current: blob([0.0, jitter, 0.0], 0.3, n_points, rng::derive(rs, &[0])),
                context: blob([0.0, 0.8, 0.2], 0.1, n_points, rng::derive(rs, &[1])),
                goals: vec![
                    blob([-0.8, jitter, 0.1], 0.15, n_points, rng::derive(rs, &[2])),
                    blob([0.8, jitter, 0.1], 0.15, n_points, rng::derive(rs, &[3])),
                ],
                mode_labels: vec!["left".into(), "right".into()],
                scenario: dummy_scenario(),
                resample_floor: 1e-4,
            }
        })
        .collect()
}

/// Single-goal records: goals drawn from one 3-D Gaussian cloud family.
pub fn gaussian_toy(count: usize, n_points: usize, seed: u64) -> Vec<DemoRecord> {
    (0..count)
        .map(|i| {
            let rs = rng::derive(seed, &[77, i as u64]);
            DemoRecord {
                id: format!("gauss-s{seed}-{i:03}"),
                current: blob([0.0, 0.0, 0.0], 0.3, n_points, rng::derive(rs, &[0])),
                context: blob([0.0, 0.8, 0.2], 0.1, n_points, rng::derive(rs, &[1])),
                goals: vec![blob(
                    [0.3, -0.2, 0.1],
                    0.5,
                    n_points,
                    rng::derive(rs, &[2]),
                )],
                mode_labels: vec!["only".into()],
                scenario: dummy_scenario(),
                resample_floor: 1e-4,
            }
        })
        .collect()
}
