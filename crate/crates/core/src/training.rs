//! Training loop: minibatch sampling, latent draws, forward diffusion,
//! noise prediction, the combined loss, and optimization.
//!
//! Per record the loss is
//! `L = sum_i ||eps_i - eps'_i||^2 + kl_weight * (1/T) KL[q(z|goal) || N(0,I)]`
//! summed over points and averaged over the batch. Randomness discipline:
//! one master seed derives an independent stream per (epoch, record), so
//! batch order never changes the per-record draws, and the whole run is
//! reproducible from (dataset, config).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::{self, PointCloud};
use crate::encoders::{kl_node, GoalEncoder, SetEncoder};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{GradBuffer, ParamStore};
use crate::predictor::{FusionMode, NoisePredictor};
use crate::rng;
use crate::schedule::{self, DiffusionSchedule};
use crate::tasks::DemoRecord;
use crate::tensor::Tensor;

pub const ADAM_BETAS: (f64, f64) = (0.9, 0.999);
pub const ADAM_EPS: f64 = 1e-8;

// Seed stream tags.
const TAG_INIT: u64 = 0;
const TAG_RECORD: u64 = 1;
const TAG_SHUFFLE: u64 = 2;
const TAG_RESAMPLE: u64 = 3;

fn default_num_points() -> usize {
    256
}
fn default_latent_dim() -> usize {
    256
}
fn default_feature_dim() -> usize {
    256
}
fn default_t_steps() -> usize {
    schedule::DEFAULT_T
}
fn default_beta_start() -> f64 {
    schedule::DEFAULT_BETA_START
}
fn default_beta_end() -> f64 {
    schedule::DEFAULT_BETA_END
}
fn default_lr() -> f64 {
    1e-3
}
fn default_batch() -> usize {
    16
}
fn default_kl_weight() -> f64 {
    1.0
}
fn default_fusion_mode() -> FusionMode {
    FusionMode::OutputGate
}

/// Run configuration; the JSON keys are exactly these field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_num_points")]
    pub num_points: usize,
    #[serde(default = "default_latent_dim")]
    pub latent_dim: usize,
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
    #[serde(rename = "T", default = "default_t_steps")]
    pub t_steps: usize,
    #[serde(default = "default_beta_start")]
    pub beta_start: f64,
    #[serde(default = "default_beta_end")]
    pub beta_end: f64,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_batch")]
    pub batch: usize,
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_fusion_mode")]
    pub fusion_mode: FusionMode,
    #[serde(default = "default_kl_weight")]
    pub kl_weight: f64,
    /// Strict weight sharing between the two conditioning encoders
    /// (ablation switch; separate weights by default).
    #[serde(default)]
    pub share_conditioning_weights: bool,
}

impl TrainConfig {
    pub fn with_epochs(epochs: usize) -> TrainConfig {
        TrainConfig {
            num_points: default_num_points(),
            latent_dim: default_latent_dim(),
            feature_dim: default_feature_dim(),
            t_steps: default_t_steps(),
            beta_start: default_beta_start(),
            beta_end: default_beta_end(),
            lr: default_lr(),
            batch: default_batch(),
            epochs,
            seed: 0,
            fusion_mode: default_fusion_mode(),
            kl_weight: default_kl_weight(),
            share_conditioning_weights: false,
        }
    }

    pub fn from_json(json: &str) -> Result<TrainConfig> {
        let cfg: TrainConfig =
            serde_json::from_str(json).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive: [(&str, f64); 7] = [
            ("num_points", self.num_points as f64),
            ("latent_dim", self.latent_dim as f64),
            ("feature_dim", self.feature_dim as f64),
            ("T", self.t_steps as f64),
            ("beta_start", self.beta_start),
            ("batch", self.batch as f64),
            ("kl_weight", self.kl_weight),
        ];
        for (name, v) in positive {
            if v <= 0.0 {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.lr < 0.0 {
            return Err(Error::Config(format!("lr must be >= 0, got {}", self.lr)));
        }
        schedule::make_schedule(self.t_steps, self.beta_start, self.beta_end)?;
        Ok(())
    }

    pub fn schedule(&self) -> DiffusionSchedule {
        schedule::make_schedule(self.t_steps, self.beta_start, self.beta_end)
            .expect("config validated")
    }

    /// Per-point encoder widths, scaled from the feature dimension
    /// (64/128/256 at the default 256).
    pub fn enc_widths(&self) -> [usize; 3] {
        [
            (self.feature_dim / 4).max(2),
            (self.feature_dim / 2).max(2),
            self.feature_dim,
        ]
    }

    /// Fusion MLP hidden width (512 at the default 256).
    pub fn fusion_hidden(&self) -> usize {
        2 * self.feature_dim
    }

    /// Per-point trunk widths (128/256/128 at the default 256).
    pub fn trunk_widths(&self) -> [usize; 3] {
        [
            (self.feature_dim / 2).max(2),
            self.feature_dim,
            (self.feature_dim / 2).max(2),
        ]
    }
}

/// The trainable networks: goal encoder, twin conditioning encoders, and
/// the noise predictor, all registered in one store in a fixed order.
#[derive(Debug, Clone)]
pub struct GoalModels {
    pub store: ParamStore,
    pub goal_encoder: GoalEncoder,
    pub current_encoder: SetEncoder,
    pub context_encoder: SetEncoder,
    pub predictor: NoisePredictor,
    pub config: TrainConfig,
}

impl GoalModels {
    /// Deterministic registration and initialization from the config seed.
    pub fn init(config: &TrainConfig) -> GoalModels {
        let mut store = ParamStore::new();
        let mut r = rng::stream(rng::derive(config.seed, &[TAG_INIT]));
        let widths = config.enc_widths();
        let goal_encoder = GoalEncoder::register(
            &mut store,
            &mut r,
            "goal_enc",
            widths,
            config.feature_dim,
            config.latent_dim,
        );
        let current_encoder =
            SetEncoder::register(&mut store, &mut r, "cur_enc", widths, config.feature_dim);
        let context_encoder = if config.share_conditioning_weights {
            current_encoder.clone()
        } else {
            SetEncoder::register(&mut store, &mut r, "ctx_enc", widths, config.feature_dim)
        };
        let predictor = NoisePredictor::register(
            &mut store,
            &mut r,
            "pred",
            config.latent_dim,
            config.feature_dim,
            config.fusion_hidden(),
            config.trunk_widths(),
            config.fusion_mode,
        );
        GoalModels {
            store,
            goal_encoder,
            current_encoder,
            context_encoder,
            predictor,
            config: config.clone(),
        }
    }
}

/// A demonstration prepared for training: clouds resampled to the
/// configured size and normalized by the current cloud's frame.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub id: String,
    pub current: Tensor,
    pub context: Tensor,
    pub goals: Vec<Tensor>,
    pub frame: cloud::NormalizationFrame,
}

/// Normalize (and if needed resample) records into training examples.
/// The frame comes from the current cloud and is reused for the context
/// and goal clouds of the record.
pub fn prepare_examples(records: &[DemoRecord], config: &TrainConfig) -> Result<Vec<TrainExample>> {
    records
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            let fit = |c: &PointCloud, tag: u64| -> Result<PointCloud> {
                if c.len() == config.num_points {
                    Ok(c.clone())
                } else {
                    cloud::resample(
                        c,
                        config.num_points,
                        rng::derive(config.seed, &[TAG_RESAMPLE, i as u64, tag]),
                    )
                }
            };
            let current = fit(&rec.current, 0)?;
            let context = fit(&rec.context, 1)?;
            let (current_n, frame) = cloud::normalize(&current);
            let context_n = cloud::apply_frame(&context, &frame);
            let goals = rec
                .goals
                .iter()
                .enumerate()
                .map(|(k, goal)| {
                    let goal = fit(goal, 2 + k as u64)?;
                    Ok(cloud::apply_frame(&goal, &frame).to_tensor())
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(TrainExample {
                id: rec.id.clone(),
                current: current_n.to_tensor(),
                context: context_n.to_tensor(),
                goals,
                frame,
            })
        })
        .collect()
}

/// Per-record random draws for one step: which goal to fit, the diffusion
/// step, the target noise, and the latent reparameterization draw.
#[derive(Debug, Clone)]
pub struct StepDraws {
    pub goal_idx: usize,
    pub t: usize,
    pub eps: Tensor,
    pub xi: Tensor,
}

/// Draw the goal index only, consuming the same first draw as
/// [`step_draws`]; the deterministic baseline shares goal choices with the
/// diffusion model this way.
pub fn goal_choice(config: &TrainConfig, epoch: usize, record_idx: usize, n_goals: usize) -> usize {
    let mut r = rng::stream(rng::derive(
        config.seed,
        &[TAG_RECORD, epoch as u64, record_idx as u64],
    ));
    r.random_range(0..n_goals)
}

pub fn step_draws(
    config: &TrainConfig,
    epoch: usize,
    record_idx: usize,
    n_goals: usize,
) -> StepDraws {
    let mut r = rng::stream(rng::derive(
        config.seed,
        &[TAG_RECORD, epoch as u64, record_idx as u64],
    ));
    let goal_idx = r.random_range(0..n_goals);
    let t = r.random_range(1..=config.t_steps);
    let eps = rng::normal_tensor(&mut r, vec![config.num_points, 3]);
    let xi = rng::normal_tensor(&mut r, vec![config.latent_dim]);
    StepDraws {
        goal_idx,
        t,
        eps,
        xi,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub noise: f64,
    pub kl: f64,
    pub total: f64,
}

/// Build the full per-record loss graph (the Algorithm-1 step for one
/// record). Returns the graph, the scalar loss node, and the loss values.
pub fn record_loss_graph(
    models: &GoalModels,
    sched: &DiffusionSchedule,
    example: &TrainExample,
    draws: &StepDraws,
    kl_weight: f64,
) -> Result<(Graph, Var, LossParts)> {
    let mut g = Graph::new();
    let store = &models.store;
    let goal = &example.goals[draws.goal_idx];

    let goal_var = g.input(goal.clone());
    let latent = models
        .goal_encoder
        .encode_goal(&mut g, store, goal_var, &draws.xi)?;

    let cur = g.input(example.current.clone());
    let psi_c = models.current_encoder.encode(&mut g, store, cur)?;
    let ctx = g.input(example.context.clone());
    let psi_t = models.context_encoder.encode(&mut g, store, ctx)?;

    // Forward diffusion is data-only: no gradient flows through it.
    let noisy = schedule::forward_diffuse(sched, goal, draws.t, &draws.eps)?;
    let noisy_var = g.input(noisy);

    let eps_pred = models.predictor.predict_noise(
        &mut g, store, sched, draws.t, noisy_var, latent.z, psi_c, psi_t,
    )?;

    let eps_target = g.input(draws.eps.clone());
    let diff = g.sub(eps_pred, eps_target)?;
    let noise_loss = g.sumsq(diff);

    let kl = kl_node(&mut g, latent.mu, latent.sigma)?;
    let kl_loss = g.scale(kl, 1.0 / sched.t_steps() as f64);

    let weighted_kl = g.scale(kl_loss, kl_weight);
    let total = g.add(noise_loss, weighted_kl)?;

    let parts = LossParts {
        noise: g.value(noise_loss).item()?,
        kl: g.value(kl_loss).item()?,
        total: g.value(total).item()?,
    };
    Ok((g, total, parts))
}

/// Mean total loss of a batch under fixed draws (pure in the parameters;
/// used for finite-difference checks and held-out evaluation).
pub fn batch_loss_value(
    models: &GoalModels,
    sched: &DiffusionSchedule,
    batch: &[(&TrainExample, &StepDraws)],
    kl_weight: f64,
) -> Result<f64> {
    let mut total = 0.0;
    for (ex, draws) in batch {
        let (_, _, parts) = record_loss_graph(models, sched, ex, draws, kl_weight)?;
        total += parts.total;
    }
    Ok(total / batch.len() as f64)
}

/// Mean-batch gradients under fixed draws, reduced in record order.
pub fn batch_loss_grads(
    models: &GoalModels,
    sched: &DiffusionSchedule,
    batch: &[(&TrainExample, &StepDraws)],
    kl_weight: f64,
) -> Result<(f64, GradBuffer)> {
    let per_record: Vec<(GradBuffer, LossParts)> = crate::parallel::run(|| {
        use rayon::prelude::*;
        batch
            .par_iter()
            .map(|(ex, draws)| {
                let (g, total, parts) = record_loss_graph(models, sched, ex, draws, kl_weight)?;
                let grads = g.backward(total, &models.store)?;
                Ok((grads, parts))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let scale = 1.0 / batch.len() as f64;
    let mut out = models.store.new_grad_buffer();
    let mut total = 0.0;
    for (grads, parts) in &per_record {
        total += parts.total;
        for (slot, g) in out.iter_mut().zip(grads) {
            if let Some(g) = g {
                match slot {
                    Some(acc) => {
                        for (a, &x) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a += x * scale;
                        }
                    }
                    none => {
                        let mut scaled = g.clone();
                        for v in scaled.data_mut() {
                            *v *= scale;
                        }
                        *none = Some(scaled);
                    }
                }
            }
        }
    }
    Ok((total * scale, out))
}

/// Outcome of one optimization step.
#[derive(Debug, Clone)]
pub enum StepOutcome {
    Applied(LossParts),
    /// Non-finite loss or gradient: parameters and moments untouched.
    Aborted(String),
}

/// Cosine learning-rate decay from the configured peak to 10% of it.
/// Noisy minibatch gradients (small batches, per-record step draws) need
/// the end-of-run damping to settle into a sharp minimum.
pub fn lr_at_epoch(config: &TrainConfig, epoch: usize) -> f64 {
    if config.epochs <= 1 {
        return config.lr;
    }
    let frac = epoch as f64 / (config.epochs - 1) as f64;
    let cos = 0.5 * (1.0 + (std::f64::consts::PI * frac).cos());
    config.lr * (0.1 + 0.9 * cos)
}

/// One optimization step over a batch of records with their draws.
pub fn training_step(
    models: &mut GoalModels,
    sched: &DiffusionSchedule,
    batch: &[(&TrainExample, StepDraws)],
    config: &TrainConfig,
) -> Result<StepOutcome> {
    training_step_at_lr(models, sched, batch, config, config.lr)
}

/// One optimization step with an explicit learning rate (the epoch loop
/// passes the decayed value).
pub fn training_step_at_lr(
    models: &mut GoalModels,
    sched: &DiffusionSchedule,
    batch: &[(&TrainExample, StepDraws)],
    config: &TrainConfig,
    lr: f64,
) -> Result<StepOutcome> {
    if batch.is_empty() {
        return Err(Error::invalid("training_step", "empty batch"));
    }
    let borrowed: Vec<(&TrainExample, &StepDraws)> =
        batch.iter().map(|(ex, d)| (*ex, d)).collect();
    let per_record: Vec<(GradBuffer, LossParts)> = crate::parallel::run(|| {
        use rayon::prelude::*;
        borrowed
            .par_iter()
            .map(|(ex, draws)| {
                let (g, total, parts) =
                    record_loss_graph(models, sched, ex, draws, config.kl_weight)?;
                let grads = g.backward(total, &models.store)?;
                Ok((grads, parts))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut mean = LossParts {
        noise: 0.0,
        kl: 0.0,
        total: 0.0,
    };
    for (_, parts) in &per_record {
        mean.noise += parts.noise;
        mean.kl += parts.kl;
        mean.total += parts.total;
    }
    let n = per_record.len() as f64;
    mean.noise /= n;
    mean.kl /= n;
    mean.total /= n;

    if !mean.total.is_finite() {
        return Ok(StepOutcome::Aborted(format!(
            "non-finite batch loss {}: step skipped, parameters rolled back",
            mean.total
        )));
    }

    for (grads, _) in &per_record {
        models.store.accumulate(grads);
    }
    models.store.scale_grads(1.0 / n);
    let applied = models.store.adam_step(lr, ADAM_BETAS, ADAM_EPS);
    models.store.zero_grads();
    match applied {
        Ok(()) => Ok(StepOutcome::Applied(mean)),
        Err(e) => Ok(StepOutcome::Aborted(format!(
            "{e}: step skipped, parameters rolled back"
        ))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub noise: f64,
    pub kl: f64,
    pub total: f64,
}

pub struct TrainResult {
    pub models: GoalModels,
    pub loss_curve: Vec<EpochLoss>,
    pub events: Vec<String>,
    pub train_record_ids: Vec<String>,
}

fn shuffled_order(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut r = rng::stream(seed);
    for i in (1..n).rev() {
        let j = r.random_range(0..=i);
        order.swap(i, j);
    }
    order
}

/// Full training run: deterministic given (records, config).
pub fn train(records: &[DemoRecord], config: &TrainConfig) -> Result<TrainResult> {
    train_with_progress(records, config, |_, _, _| {})
}

/// As [`train`], invoking `progress(epoch, loss, models)` after every
/// epoch (loss reporting and snapshot checkpoints).
pub fn train_with_progress(
    records: &[DemoRecord],
    config: &TrainConfig,
    mut progress: impl FnMut(usize, &EpochLoss, &GoalModels),
) -> Result<TrainResult> {
    if records.is_empty() {
        return Err(Error::invalid("train", "empty dataset"));
    }
    config.validate()?;
    let examples = prepare_examples(records, config)?;
    let sched = config.schedule();
    let mut models = GoalModels::init(config);
    let mut loss_curve = Vec::with_capacity(config.epochs);
    let mut events = Vec::new();

    for epoch in 0..config.epochs {
        let order = shuffled_order(
            examples.len(),
            rng::derive(config.seed, &[TAG_SHUFFLE, epoch as u64]),
        );
        let lr = lr_at_epoch(config, epoch);
        let mut sums = (0.0, 0.0, 0.0);
        let mut applied_batches = 0usize;
        for chunk in order.chunks(config.batch) {
            let batch: Vec<(&TrainExample, StepDraws)> = chunk
                .iter()
                .map(|&i| {
                    let ex = &examples[i];
                    (ex, step_draws(config, epoch, i, ex.goals.len()))
                })
                .collect();
            match training_step_at_lr(&mut models, &sched, &batch, config, lr)? {
                StepOutcome::Applied(parts) => {
                    sums.0 += parts.noise;
                    sums.1 += parts.kl;
                    sums.2 += parts.total;
                    applied_batches += 1;
                }
                StepOutcome::Aborted(reason) => {
                    events.push(format!("epoch {epoch}: {reason}"));
                }
            }
        }
        let denom = applied_batches.max(1) as f64;
        let epoch_loss = EpochLoss {
            epoch,
            noise: sums.0 / denom,
            kl: sums.1 / denom,
            total: sums.2 / denom,
        };
        progress(epoch, &epoch_loss, &models);
        loss_curve.push(epoch_loss);
    }

    Ok(TrainResult {
        models,
        loss_curve,
        events,
        train_record_ids: records.iter().map(|r| r.id.clone()).collect(),
    })
}

/// Mean loss of a set of examples under frozen draws from a fixed tag;
/// pure in the parameters (for held-out tracking in tests).
pub fn heldout_loss(
    models: &GoalModels,
    sched: &DiffusionSchedule,
    examples: &[TrainExample],
    config: &TrainConfig,
    tag: u64,
) -> Result<f64> {
    let draws: Vec<StepDraws> = examples
        .iter()
        .enumerate()
        .map(|(i, ex)| step_draws(config, tag as usize, i + 1_000_000, ex.goals.len()))
        .collect();
    let batch: Vec<(&TrainExample, &StepDraws)> = examples.iter().zip(draws.iter()).collect();
    batch_loss_value(models, sched, &batch, config.kl_weight)
}
