//! Reverse-diffusion sampling of goal clouds.
//!
//! The latent `z` is drawn from the unit Gaussian prior (the goal encoder
//! exists only for training), the chain starts from a fully-noisy cloud,
//! and the loop applies the noise predictor followed by the reverse update
//! from `t = T` down to 1, strictly sequentially. The default variant is
//! the deterministic update; the stochastic variant re-adds the reverse
//! kernel's variance. Sampling never mutates model parameters.

use serde::{Deserialize, Serialize};

use crate::cloud::{self, PointCloud};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::predictor::embed_time;
use crate::rng;
use crate::schedule::{self, DiffusionSchedule};
use crate::tensor::Tensor;
use crate::training::GoalModels;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerVariant {
    Deterministic,
    Stochastic,
}

impl std::fmt::Display for SamplerVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SamplerVariant::Deterministic => write!(f, "deterministic"),
            SamplerVariant::Stochastic => write!(f, "stochastic"),
        }
    }
}

/// Run the reverse chain from `x_init` (the fully-noisy cloud at `t = T`)
/// with an arbitrary noise predictor. `noise_rng` supplies the stochastic
/// variant's draws; a non-finite intermediate aborts with its step index.
pub fn reverse_sample(
    sched: &DiffusionSchedule,
    x_init: Tensor,
    variant: SamplerVariant,
    noise_rng: &mut rand_chacha::ChaCha8Rng,
    mut predict: impl FnMut(&Tensor, usize) -> Result<Tensor>,
) -> Result<Tensor> {
    let stochastic = variant == SamplerVariant::Stochastic;
    let mut x = x_init;
    for t in (1..=sched.t_steps()).rev() {
        let eps = predict(&x, t)?;
        let z = if stochastic && t > 1 {
            Some(schedule::noise_like(noise_rng, x.shape()))
        } else {
            None
        };
        x = schedule::reverse_step(sched, &x, &eps, t, stochastic, z.as_ref())?;
        if !x.all_finite() {
            return Err(Error::NonFinite {
                context: format!("reverse diffusion at step t={t}"),
            });
        }
    }
    Ok(x)
}

/// Conditioning features computed once per scenario; reused across all
/// samples drawn for it.
pub struct ScenarioEncoding {
    pub psi_c: Tensor,
    pub psi_t: Tensor,
    pub frame: cloud::NormalizationFrame,
}

pub fn encode_scenario(
    models: &GoalModels,
    current: &PointCloud,
    context: &PointCloud,
) -> Result<ScenarioEncoding> {
    let (cur_n, frame) = cloud::normalize(current);
    let ctx_n = cloud::apply_frame(context, &frame);
    let mut g = Graph::new();
    let cur = g.input(cur_n.to_tensor());
    let psi_c = models.current_encoder.encode(&mut g, &models.store, cur)?;
    let ctx = g.input(ctx_n.to_tensor());
    let psi_t = models.context_encoder.encode(&mut g, &models.store, ctx)?;
    Ok(ScenarioEncoding {
        psi_c: (**g.value(psi_c)).clone(),
        psi_t: (**g.value(psi_t)).clone(),
        frame,
    })
}

/// One goal sample in the scenario's world frame, driven entirely by the
/// derived streams of `seed`.
pub fn sample_goal_encoded(
    models: &GoalModels,
    sched: &DiffusionSchedule,
    enc: &ScenarioEncoding,
    seed: u64,
    variant: SamplerVariant,
) -> Result<PointCloud> {
    let cfg = &models.config;
    let mut r = rng::stream(seed);
    let z = rng::normal_tensor(&mut r, vec![cfg.latent_dim]);
    let x_init = rng::normal_tensor(&mut r, vec![cfg.num_points, 3]);
    sample_goal_with_draws(models, sched, enc, z, x_init, &mut r, variant)
}

/// As [`sample_goal_encoded`] but with the latent and initial noise
/// supplied by the caller (diagnostics and tests).
pub fn sample_goal_with_draws(
    models: &GoalModels,
    sched: &DiffusionSchedule,
    enc: &ScenarioEncoding,
    z: Tensor,
    x_init: Tensor,
    noise_rng: &mut rand_chacha::ChaCha8Rng,
    variant: SamplerVariant,
) -> Result<PointCloud> {

    // The fused context (minus the time embedding) is constant across the
    // chain: compute it once per sample.
    let fused = {
        let mut g = Graph::new();
        let zv = g.input(z);
        let cv = g.input(enc.psi_c.clone());
        let tv = g.input(enc.psi_t.clone());
        let fused = models
            .predictor
            .fuse_partial(&mut g, &models.store, zv, cv, tv)?;
        (**g.value(fused)).clone()
    };

    let x0 = reverse_sample(sched, x_init, variant, noise_rng, |x_t, t| {
        let mut g = Graph::new();
        let fused_v = g.input(fused.clone());
        let phi = models
            .predictor
            .phi_from_partial(&mut g, fused_v, embed_time(sched, t)?)?;
        let cloud_v = g.input(x_t.clone());
        let out = models
            .predictor
            .predict_from_phi(&mut g, &models.store, phi, cloud_v)?;
        Ok((**g.value(out)).clone())
    })?;

    let normalized = PointCloud::from_tensor(&x0)?;
    Ok(cloud::denormalize(&normalized, &enc.frame))
}

/// Sample one goal cloud for a scenario.
pub fn sample_goal(
    models: &GoalModels,
    sched: &DiffusionSchedule,
    current: &PointCloud,
    context: &PointCloud,
    seed: u64,
    variant: SamplerVariant,
) -> Result<PointCloud> {
    let enc = encode_scenario(models, current, context)?;
    sample_goal_encoded(models, sched, &enc, seed, variant)
}

/// `k` independent samples from per-sample derived seeds, in order.
pub fn sample_goals(
    models: &GoalModels,
    sched: &DiffusionSchedule,
    current: &PointCloud,
    context: &PointCloud,
    k: usize,
    seed: u64,
    variant: SamplerVariant,
) -> Result<Vec<PointCloud>> {
    if k == 0 {
        return Err(Error::invalid("sample_goals", "k must be >= 1"));
    }
    let enc = encode_scenario(models, current, context)?;
    crate::parallel::run(|| {
        use rayon::prelude::*;
        (0..k)
            .into_par_iter()
            .map(|i| sample_goal_encoded(models, sched, &enc, rng::derive(seed, &[i as u64]), variant))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_predictor_scales_initial_noise_by_inv_sqrt_alpha_bar() {
        let sched = DiffusionSchedule::default_schedule();
        let mut r = rng::stream(3);
        let x_init = rng::normal_tensor(&mut r, vec![8, 3]);
        let mut noise_rng = rng::stream(4);
        let out = reverse_sample(
            &sched,
            x_init.clone(),
            SamplerVariant::Deterministic,
            &mut noise_rng,
            |x, _| Ok(Tensor::zeros(x.shape().to_vec())),
        )
        .unwrap();
        let factor = 1.0 / sched.alpha_bar(sched.t_steps()).unwrap().sqrt();
        for (o, x) in out.data().iter().zip(x_init.data()) {
            let expected = x * factor;
            assert!(
                (o - expected).abs() <= 1e-12 * expected.abs().max(1.0),
                "{o} vs {expected}"
            );
        }
    }

    #[test]
    fn non_finite_intermediate_reports_step() {
        let sched = DiffusionSchedule::default_schedule();
        let x_init = Tensor::zeros(vec![4, 3]);
        let mut noise_rng = rng::stream(5);
        let err = reverse_sample(
            &sched,
            x_init,
            SamplerVariant::Deterministic,
            &mut noise_rng,
            |x, t| {
                if t == 97 {
                    Ok(x.map(|_| f64::NAN))
                } else {
                    Ok(Tensor::zeros(x.shape().to_vec()))
                }
            },
        )
        .unwrap_err();
        assert!(err.to_string().contains("t=97"), "{err}");
    }
}
