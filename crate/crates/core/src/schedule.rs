//! Noise schedule, forward diffusion kernel, and the reverse update.
//!
//! Steps are 1-indexed: `t = 1..=T`, with the convention `alpha_bar(0) = 1`
//! (no noise). The default schedule is linear in beta and chosen so that
//! `alpha_bar(T) < 0.01`, i.e. the chain ends essentially at pure noise.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

pub const DEFAULT_T: usize = 100;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.1;

/// Per-step noise coefficients for `t = 1..=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    t_steps: usize,
    beta_start: f64,
    beta_end: f64,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

/// Linear beta schedule from `beta_start` to `beta_end` over `t_steps`.
pub fn make_schedule(t_steps: usize, beta_start: f64, beta_end: f64) -> Result<DiffusionSchedule> {
    if t_steps < 1 {
        return Err(Error::invalid("make_schedule", "T must be >= 1"));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::invalid(
            "make_schedule",
            format!("need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"),
        ));
    }
    let mut beta = Vec::with_capacity(t_steps);
    for i in 0..t_steps {
        let frac = if t_steps == 1 {
            0.0
        } else {
            i as f64 / (t_steps - 1) as f64
        };
        beta.push(beta_start + frac * (beta_end - beta_start));
    }
    Ok(from_betas(beta, beta_start, beta_end))
}

/// Schedule from an explicit beta sequence; each beta must lie in (0, 1).
pub fn make_schedule_from_betas(beta: Vec<f64>) -> Result<DiffusionSchedule> {
    if beta.is_empty() {
        return Err(Error::invalid("make_schedule_from_betas", "empty beta"));
    }
    if beta.iter().any(|&b| !(0.0 < b && b < 1.0)) {
        return Err(Error::invalid(
            "make_schedule_from_betas",
            "all beta values must lie in (0, 1)",
        ));
    }
    let (lo, hi) = (beta[0], beta[beta.len() - 1]);
    Ok(from_betas(beta, lo, hi))
}

fn from_betas(beta: Vec<f64>, beta_start: f64, beta_end: f64) -> DiffusionSchedule {
    let t_steps = beta.len();
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = Vec::with_capacity(t_steps);
    let mut prod = 1.0;
    for &a in &alpha {
        prod *= a;
        alpha_bar.push(prod);
    }
    DiffusionSchedule {
        t_steps,
        beta_start,
        beta_end,
        beta,
        alpha,
        alpha_bar,
    }
}

impl DiffusionSchedule {
    pub fn default_schedule() -> DiffusionSchedule {
        make_schedule(DEFAULT_T, DEFAULT_BETA_START, DEFAULT_BETA_END)
            .expect("default schedule parameters are valid")
    }

    pub fn t_steps(&self) -> usize {
        self.t_steps
    }

    pub fn beta_start(&self) -> f64 {
        self.beta_start
    }

    pub fn beta_end(&self) -> f64 {
        self.beta_end
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t < 1 || t > self.t_steps {
            return Err(Error::StepOutOfRange {
                t,
                t_max: self.t_steps,
            });
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.beta[t - 1])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.alpha[t - 1])
    }

    /// Cumulative signal fraction; `alpha_bar(0) = 1` by convention.
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        if t == 0 {
            return Ok(1.0);
        }
        self.check_t(t)?;
        Ok(self.alpha_bar[t - 1])
    }
}

/// Forward diffusion kernel: `x_t = sqrt(abar_t) x_0 + sqrt(1 - abar_t) eps`,
/// applied per point. `t = 0` is the identity.
pub fn forward_diffuse(
    sched: &DiffusionSchedule,
    x0: &Tensor,
    t: usize,
    eps: &Tensor,
) -> Result<Tensor> {
    if x0.shape() != eps.shape() {
        return Err(Error::ShapeMismatch {
            op: "forward_diffuse",
            left: x0.shape().to_vec(),
            right: eps.shape().to_vec(),
        });
    }
    let abar = sched.alpha_bar(t)?;
    let (sa, sn) = (abar.sqrt(), (1.0 - abar).sqrt());
    let data = x0
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&x, &e)| sa * x + sn * e)
        .collect();
    Tensor::new(x0.shape().to_vec(), data)
}

/// One reverse-diffusion update from `x_t` to `x_{t-1}` given a predicted
/// noise `eps_pred`:
///
/// `x_{t-1} = (x_t - ((1 - alpha_t)/sqrt(1 - abar_t)) eps_pred) / sqrt(alpha_t)`
///
/// The default is the deterministic update. With `stochastic` set and
/// `t > 1`, `sqrt(beta_t) * z` is added, restoring the sampling variance of
/// the reverse kernel; `z_noise` must then be supplied.
pub fn reverse_step(
    sched: &DiffusionSchedule,
    x_t: &Tensor,
    eps_pred: &Tensor,
    t: usize,
    stochastic: bool,
    z_noise: Option<&Tensor>,
) -> Result<Tensor> {
    if x_t.shape() != eps_pred.shape() {
        return Err(Error::ShapeMismatch {
            op: "reverse_step",
            left: x_t.shape().to_vec(),
            right: eps_pred.shape().to_vec(),
        });
    }
    let alpha = sched.alpha(t)?;
    let abar = sched.alpha_bar(t)?;
    let coef = (1.0 - alpha) / (1.0 - abar).sqrt();
    let inv_sqrt_alpha = 1.0 / alpha.sqrt();
    let mut data: Vec<f64> = x_t
        .data()
        .iter()
        .zip(eps_pred.data())
        .map(|(&x, &e)| inv_sqrt_alpha * (x - coef * e))
        .collect();
    if stochastic && t > 1 {
        let z = z_noise.ok_or_else(|| {
            Error::invalid("reverse_step", "stochastic update requires z_noise draws")
        })?;
        if z.shape() != x_t.shape() {
            return Err(Error::ShapeMismatch {
                op: "reverse_step",
                left: x_t.shape().to_vec(),
                right: z.shape().to_vec(),
            });
        }
        let sb = sched.beta(t)?.sqrt();
        for (d, &n) in data.iter_mut().zip(z.data()) {
            *d += sb * n;
        }
    }
    Tensor::new(x_t.shape().to_vec(), data)
}

/// Standard-normal draws shaped like a cloud tensor, for forward noise or
/// the stochastic reverse term.
pub fn noise_like(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    rng::normal_tensor(rng, shape.to_vec())
}
