//! Diffusion-based goal generation for deformable-object point clouds.
//!
//! Given a current object cloud and a contextual cloud (tool, container),
//! the models here learn a distribution over valid goal shapes from
//! multimodal demonstrations and sample diverse goal clouds by reverse
//! diffusion. The crate also ships the synthetic task generators, the
//! evaluation metrics, and a deterministic regressor baseline used for
//! mode-averaging comparisons.

pub mod baseline;
pub mod checkpoint;
pub mod cloud;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod graph;
pub mod nn;
pub mod parallel;
pub mod params;
pub mod predictor;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod tasks;
pub mod tensor;
pub mod training;

pub use cloud::{NormalizationFrame, PointCloud};
pub use error::{Error, Result};
pub use predictor::FusionMode;
pub use schedule::DiffusionSchedule;
pub use tensor::Tensor;
pub use training::TrainConfig;
