//! Deterministic goal regressor used for mode-averaging comparisons.
//!
//! The same twin conditioning encoders as the diffusion model, followed by
//! an MLP decoder straight from `concat(psi_c, psi_T)` to the N x 3 goal
//! coordinates. Trained with a Chamfer loss against a demonstration goal
//! chosen uniformly among the record's modes each epoch, so the model sees
//! the full multimodal distribution but can only answer with one shape.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cloud::{self, PointCloud};
use crate::encoders::SetEncoder;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{Dense, Init};
use crate::params::{GradBuffer, ParamStore};
use crate::rng;
use crate::tasks::DemoRecord;
use crate::training::{
    goal_choice, lr_at_epoch, prepare_examples, EpochLoss, TrainConfig, TrainExample, ADAM_BETAS,
    ADAM_EPS,
};

const TAG_INIT: u64 = 100;
const TAG_SHUFFLE: u64 = 102;

#[derive(Debug, Clone)]
pub struct BaselineModel {
    pub store: ParamStore,
    pub current_encoder: SetEncoder,
    pub context_encoder: SetEncoder,
    decoder: Vec<Dense>,
    pub config: TrainConfig,
}

impl BaselineModel {
    pub fn init(config: &TrainConfig) -> BaselineModel {
        let mut store = ParamStore::new();
        let mut r = rng::stream(rng::derive(config.seed, &[TAG_INIT]));
        let widths = config.enc_widths();
        let current_encoder =
            SetEncoder::register(&mut store, &mut r, "cur_enc", widths, config.feature_dim);
        let context_encoder = if config.share_conditioning_weights {
            current_encoder.clone()
        } else {
            SetEncoder::register(&mut store, &mut r, "ctx_enc", widths, config.feature_dim)
        };
        let hidden = 2 * config.feature_dim;
        let out = 3 * config.num_points;
        let decoder = vec![
            Dense::register(&mut store, &mut r, "dec0", hidden, hidden, Init::He),
            Dense::register(&mut store, &mut r, "dec1", hidden, out, Init::Linear),
        ];
        BaselineModel {
            store,
            current_encoder,
            context_encoder,
            decoder,
            config: config.clone(),
        }
    }

    /// Goal coordinates `[N, 3]` as a graph node.
    pub fn predict_var(&self, g: &mut Graph, current: Var, context: Var) -> Result<Var> {
        let psi_c = self.current_encoder.encode(g, &self.store, current)?;
        let psi_t = self.context_encoder.encode(g, &self.store, context)?;
        let mut x = g.concat_last(psi_c, psi_t)?;
        x = self.decoder[0].forward(g, &self.store, x)?;
        x = g.relu(x);
        x = self.decoder[1].forward(g, &self.store, x)?;
        g.reshape(x, vec![self.config.num_points, 3])
    }

    /// Deterministic world-frame prediction for a scenario.
    pub fn predict(&self, current: &PointCloud, context: &PointCloud) -> Result<PointCloud> {
        let (cur_n, frame) = cloud::normalize(current);
        let ctx_n = cloud::apply_frame(context, &frame);
        let mut g = Graph::new();
        let cur = g.input(cur_n.to_tensor());
        let ctx = g.input(ctx_n.to_tensor());
        let out = self.predict_var(&mut g, cur, ctx)?;
        let pred = PointCloud::from_tensor(g.value(out))?;
        Ok(cloud::denormalize(&pred, &frame))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineEpochLoss {
    pub epoch: usize,
    pub chamfer: f64,
}

pub struct BaselineTrainResult {
    pub model: BaselineModel,
    pub loss_curve: Vec<EpochLoss>,
    pub events: Vec<String>,
    pub train_record_ids: Vec<String>,
}

fn record_loss(
    model: &BaselineModel,
    example: &TrainExample,
    goal_idx: usize,
) -> Result<(GradBuffer, f64)> {
    let mut g = Graph::new();
    let cur = g.input(example.current.clone());
    let ctx = g.input(example.context.clone());
    let pred = model.predict_var(&mut g, cur, ctx)?;
    let target = Arc::new(example.goals[goal_idx].clone());
    let loss = g.chamfer_to_const(pred, target)?;
    let value = g.value(loss).item()?;
    let grads = g.backward(loss, &model.store)?;
    Ok((grads, value))
}

/// Train the baseline with the same schedule of goal choices, shuffles,
/// and batch sizes as the diffusion run.
pub fn train_baseline(records: &[DemoRecord], config: &TrainConfig) -> Result<BaselineTrainResult> {
    if records.is_empty() {
        return Err(Error::invalid("train_baseline", "empty dataset"));
    }
    config.validate()?;
    let examples = prepare_examples(records, config)?;
    let mut model = BaselineModel::init(config);
    let mut loss_curve = Vec::with_capacity(config.epochs);
    let mut events = Vec::new();

    for epoch in 0..config.epochs {
        let order = shuffled_order(
            examples.len(),
            rng::derive(config.seed, &[TAG_SHUFFLE, epoch as u64]),
        );
        let lr = lr_at_epoch(config, epoch);
        let mut sum = 0.0;
        let mut applied = 0usize;
        for chunk in order.chunks(config.batch) {
            let batch: Vec<(&TrainExample, usize)> = chunk
                .iter()
                .map(|&i| {
                    let ex = &examples[i];
                    (ex, goal_choice(config, epoch, i, ex.goals.len()))
                })
                .collect();
            let per_record: Vec<(GradBuffer, f64)> = crate::parallel::run(|| {
                use rayon::prelude::*;
                batch
                    .par_iter()
                    .map(|(ex, k)| record_loss(&model, ex, *k))
                    .collect::<Result<Vec<_>>>()
            })?;
            let mean: f64 =
                per_record.iter().map(|(_, v)| v).sum::<f64>() / per_record.len() as f64;
            if !mean.is_finite() {
                events.push(format!("epoch {epoch}: non-finite baseline loss, step skipped"));
                continue;
            }
            for (grads, _) in &per_record {
                model.store.accumulate(grads);
            }
            model.store.scale_grads(1.0 / per_record.len() as f64);
            let step = model.store.adam_step(lr, ADAM_BETAS, ADAM_EPS);
            model.store.zero_grads();
            match step {
                Ok(()) => {
                    sum += mean;
                    applied += 1;
                }
                Err(e) => events.push(format!("epoch {epoch}: {e}, step skipped")),
            }
        }
        let chamfer = sum / applied.max(1) as f64;
        loss_curve.push(EpochLoss {
            epoch,
            noise: 0.0,
            kl: 0.0,
            total: chamfer,
        });
    }

    Ok(BaselineTrainResult {
        model,
        loss_curve,
        events,
        train_record_ids: records.iter().map(|r| r.id.clone()).collect(),
    })
}

fn shuffled_order(n: usize, seed: u64) -> Vec<usize> {
    use rand::Rng;
    let mut order: Vec<usize> = (0..n).collect();
    let mut r = rng::stream(seed);
    for i in (1..n).rev() {
        let j = r.random_range(0..=i);
        order.swap(i, j);
    }
    order
}
