//! Permutation-invariant set encoders.
//!
//! A shared per-point MLP feeds a max-pool over the set axis, so the
//! feature is exactly invariant to point order (ties in the pool break
//! deterministically to the lowest index). The goal encoder adds parallel
//! mean/std heads and draws its latent through the reparameterization
//! `z = mu + sigma .* xi`.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{Dense, Init};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Shared-MLP + max-pool encoder producing a feature vector.
#[derive(Debug, Clone)]
pub struct SetEncoder {
    point_layers: Vec<Dense>,
    head: Dense,
}

impl SetEncoder {
    /// Per-point widths `3 -> w0 -> w1 -> w2`, then a linear head
    /// `w2 -> feature_dim` after pooling.
    pub fn register(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        widths: [usize; 3],
        feature_dim: usize,
    ) -> SetEncoder {
        let mut point_layers = Vec::new();
        let mut in_dim = 3;
        for (i, &w) in widths.iter().enumerate() {
            point_layers.push(Dense::register(
                store,
                rng,
                &format!("{prefix}.point{i}"),
                in_dim,
                w,
                Init::He,
            ));
            in_dim = w;
        }
        let head = Dense::register(
            store,
            rng,
            &format!("{prefix}.head"),
            in_dim,
            feature_dim,
            Init::Linear,
        );
        SetEncoder { point_layers, head }
    }

    /// Encode an `[n, 3]` cloud (already in its record's normalized frame)
    /// into a feature vector.
    pub fn encode(&self, g: &mut Graph, store: &ParamStore, cloud: Var) -> Result<Var> {
        let shape = g.value(cloud).shape().to_vec();
        if shape.len() != 2 || shape[1] != 3 {
            return Err(Error::invalid(
                "SetEncoder::encode",
                format!("expected [n,3] points, got {shape:?}"),
            ));
        }
        let mut x = cloud;
        for layer in &self.point_layers {
            x = layer.forward(g, store, x)?;
            x = g.relu(x);
        }
        let pooled = g.max_set(x)?;
        self.head.forward(g, store, pooled)
    }
}

/// Goal encoder: a [`SetEncoder`] trunk with parallel mean and std heads.
#[derive(Debug, Clone)]
pub struct GoalEncoder {
    trunk: SetEncoder,
    mu_head: Dense,
    sigma_head: Dense,
}

/// A sampled goal latent with its posterior parameters and the normal draw
/// that produced it: `z = mu + sigma .* xi` exactly.
pub struct GoalLatent {
    pub z: Var,
    pub mu: Var,
    pub sigma: Var,
    pub xi: Tensor,
}

impl GoalEncoder {
    pub fn register(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        widths: [usize; 3],
        feature_dim: usize,
        latent_dim: usize,
    ) -> GoalEncoder {
        let trunk = SetEncoder::register(store, rng, &format!("{prefix}.trunk"), widths, feature_dim);
        let mu_head = Dense::register(
            store,
            rng,
            &format!("{prefix}.mu"),
            feature_dim,
            latent_dim,
            Init::Linear,
        );
        let sigma_head = Dense::register(
            store,
            rng,
            &format!("{prefix}.sigma"),
            feature_dim,
            latent_dim,
            Init::Linear,
        );
        GoalEncoder {
            trunk,
            mu_head,
            sigma_head,
        }
    }

    /// Posterior parameters and reparameterized latent for a goal cloud.
    /// `sigma` passes through softplus, so it is strictly positive.
    pub fn encode_goal(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        goal: Var,
        xi: &Tensor,
    ) -> Result<GoalLatent> {
        let feat = self.trunk.encode(g, store, goal)?;
        let feat = g.relu(feat);
        let mu = self.mu_head.forward(g, store, feat)?;
        let sigma_logits = self.sigma_head.forward(g, store, feat)?;
        let sigma = g.softplus(sigma_logits);
        if g.value(mu).shape() != xi.shape() {
            return Err(Error::ShapeMismatch {
                op: "encode_goal",
                left: g.value(mu).shape().to_vec(),
                right: xi.shape().to_vec(),
            });
        }
        let xi_var = g.input(xi.clone());
        let scaled = g.mul(sigma, xi_var)?;
        let z = g.add(mu, scaled)?;
        Ok(GoalLatent {
            z,
            mu,
            sigma,
            xi: xi.clone(),
        })
    }
}

/// Closed-form KL divergence of a diagonal Gaussian to the unit Gaussian:
/// `sum_d 0.5 (mu_d^2 + sigma_d^2 - 1 - 2 ln sigma_d)`.
pub fn kl_to_unit_gaussian(mu: &[f64], sigma: &[f64]) -> Result<f64> {
    if mu.len() != sigma.len() {
        return Err(Error::ShapeMismatch {
            op: "kl_to_unit_gaussian",
            left: vec![mu.len()],
            right: vec![sigma.len()],
        });
    }
    let mut total = 0.0;
    for (&m, &s) in mu.iter().zip(sigma) {
        if s <= 0.0 {
            return Err(Error::invalid(
                "kl_to_unit_gaussian",
                format!("sigma must be positive, got {s}"),
            ));
        }
        total += 0.5 * (m * m + s * s - 1.0 - 2.0 * s.ln());
    }
    Ok(total)
}

/// The same KL divergence as a graph node, for the training loss.
pub fn kl_node(g: &mut Graph, mu: Var, sigma: Var) -> Result<Var> {
    let dim = g.value(mu).numel() as f64;
    let s_mu = g.sumsq(mu);
    let s_sig = g.sumsq(sigma);
    let ln_sig = g.ln(sigma);
    let s_ln = g.sum(ln_sig);
    let sum2 = g.add(s_mu, s_sig)?;
    let two_ln = g.scale(s_ln, 2.0);
    let diff = g.sub(sum2, two_ln)?;
    let shifted = g.add_const(diff, -dim);
    Ok(g.scale(shifted, 0.5))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn tiny_encoder() -> (ParamStore, SetEncoder) {
        let mut store = ParamStore::new();
        let mut r = rng::stream(31);
        let enc = SetEncoder::register(&mut store, &mut r, "enc", [4, 8, 16], 16);
        (store, enc)
    }

    fn encode_cloud(store: &ParamStore, enc: &SetEncoder, cloud: &Tensor) -> Vec<f64> {
        let mut g = Graph::new();
        let c = g.input(cloud.clone());
        let f = enc.encode(&mut g, store, c).unwrap();
        g.value(f).data().to_vec()
    }

    #[test]
    fn encode_is_exactly_permutation_invariant() {
        let (store, enc) = tiny_encoder();
        let mut r = rng::stream(5);
        let cloud = rng::normal_tensor(&mut r, vec![12, 3]);
        let mut rows: Vec<Vec<f64>> = cloud.data().chunks(3).map(|c| c.to_vec()).collect();
        rows.reverse();
        rows.swap(2, 7);
        let shuffled =
            Tensor::new(vec![12, 3], rows.into_iter().flatten().collect()).unwrap();
        let a = encode_cloud(&store, &enc, &cloud);
        let b = encode_cloud(&store, &enc, &shuffled);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn duplicating_points_leaves_feature_unchanged() {
        let (store, enc) = tiny_encoder();
        let mut r = rng::stream(6);
        let cloud = rng::normal_tensor(&mut r, vec![8, 3]);
        let mut doubled = cloud.data().to_vec();
        doubled.extend_from_slice(cloud.data());
        let doubled = Tensor::new(vec![16, 3], doubled).unwrap();
        let a = encode_cloud(&store, &enc, &cloud);
        let b = encode_cloud(&store, &enc, &doubled);
        assert_eq!(a, b);
    }

    #[test]
    fn dominant_point_changes_feature() {
        let (store, enc) = tiny_encoder();
        let mut r = rng::stream(7);
        let base = rng::normal_tensor(&mut r, vec![8, 3]);
        let mut with_spike = base.data().to_vec();
        // A far-out point wins at least one pooled slot.
        with_spike.extend_from_slice(&[30.0, -25.0, 40.0]);
        let spiked = Tensor::new(vec![9, 3], with_spike).unwrap();
        let mut with_other = base.data().to_vec();
        with_other.extend_from_slice(&[-35.0, 28.0, -35.0]);
        let other = Tensor::new(vec![9, 3], with_other).unwrap();
        let a = encode_cloud(&store, &enc, &spiked);
        let b = encode_cloud(&store, &enc, &other);
        assert_ne!(a, b);
    }

    #[test]
    fn encode_rejects_wrong_point_dimensionality() {
        let (store, enc) = tiny_encoder();
        let mut g = Graph::new();
        let bad = g.input(Tensor::matrix(4, 2, vec![0.0; 8]).unwrap());
        assert!(enc.encode(&mut g, &store, bad).is_err());
    }

    fn tiny_goal_encoder() -> (ParamStore, GoalEncoder) {
        let mut store = ParamStore::new();
        let mut r = rng::stream(32);
        let enc = GoalEncoder::register(&mut store, &mut r, "goal", [4, 8, 16], 16, 8);
        (store, enc)
    }

    #[test]
    fn zero_xi_gives_z_equal_mu() {
        let (store, enc) = tiny_goal_encoder();
        let mut r = rng::stream(8);
        let cloud = rng::normal_tensor(&mut r, vec![10, 3]);
        let mut g = Graph::new();
        let c = g.input(cloud);
        let latent = enc
            .encode_goal(&mut g, &store, c, &Tensor::zeros(vec![8]))
            .unwrap();
        assert_eq!(g.value(latent.z).data(), g.value(latent.mu).data());
    }

    #[test]
    fn same_cloud_two_draws_same_posterior_different_z() {
        let (store, enc) = tiny_goal_encoder();
        let mut r = rng::stream(9);
        let cloud = rng::normal_tensor(&mut r, vec![10, 3]);
        let xi1 = rng::normal_tensor(&mut r, vec![8]);
        let xi2 = rng::normal_tensor(&mut r, vec![8]);

        let mut g1 = Graph::new();
        let c1 = g1.input(cloud.clone());
        let l1 = enc.encode_goal(&mut g1, &store, c1, &xi1).unwrap();
        let mut g2 = Graph::new();
        let c2 = g2.input(cloud);
        let l2 = enc.encode_goal(&mut g2, &store, c2, &xi2).unwrap();

        assert_eq!(g1.value(l1.mu).data(), g2.value(l2.mu).data());
        assert_eq!(g1.value(l1.sigma).data(), g2.value(l2.sigma).data());
        assert_ne!(g1.value(l1.z).data(), g2.value(l2.z).data());
        // Reparameterization holds exactly.
        for i in 0..8 {
            let z = g1.value(l1.z).data()[i];
            let mu = g1.value(l1.mu).data()[i];
            let sg = g1.value(l1.sigma).data()[i];
            assert_eq!(z, mu + sg * xi1.data()[i]);
        }
        // Sigma is strictly positive.
        assert!(g1.value(l1.sigma).data().iter().all(|&s| s > 0.0));
    }

    #[test]
    fn sigma_head_at_zero_logits_gives_ln2() {
        // Softplus of a zero logit is ln 2 per element.
        let (mut store, enc) = tiny_goal_encoder();
        // Force the sigma head to produce zero logits.
        let wid = enc.sigma_head.w;
        let bid = enc.sigma_head.b;
        store.set_value(wid, Tensor::zeros(vec![16, 8]));
        store.set_value(bid, Tensor::zeros(vec![8]));
        let mut r = rng::stream(10);
        let cloud = rng::normal_tensor(&mut r, vec![10, 3]);
        let mut g = Graph::new();
        let c = g.input(cloud);
        let latent = enc
            .encode_goal(&mut g, &store, c, &Tensor::zeros(vec![8]))
            .unwrap();
        for &s in g.value(latent.sigma).data() {
            assert!((s - 2.0f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn kl_closed_form_cases() {
        assert_eq!(kl_to_unit_gaussian(&[0.0; 4], &[1.0; 4]).unwrap(), 0.0);
        assert!((kl_to_unit_gaussian(&[1.0], &[1.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(kl_to_unit_gaussian(&[0.0], &[0.0]).is_err());
        assert!(kl_to_unit_gaussian(&[0.0], &[-1.0]).is_err());
        // Non-negative away from (0, 1).
        assert!(kl_to_unit_gaussian(&[0.3], &[0.7]).unwrap() > 0.0);
    }

    #[test]
    fn kl_node_matches_closed_form() {
        let mu = vec![0.5, -1.2, 0.0];
        let sigma = vec![0.8, 1.5, 2.0];
        let expected = kl_to_unit_gaussian(&mu, &sigma).unwrap();
        let mut g = Graph::new();
        let m = g.input(Tensor::vector(mu));
        let s = g.input(Tensor::vector(sigma));
        let kl = kl_node(&mut g, m, s).unwrap();
        assert!((g.value(kl).item().unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn kl_closed_form_matches_monte_carlo() {
        // KL = E_q[ln q(z) - ln p(z)] over z = mu + sigma*xi.
        let mu = [0.4, -0.9];
        let sigma = [0.6, 1.7];
        let expected = kl_to_unit_gaussian(&mu, &sigma).unwrap();
        let mut r = rng::stream(12);
        let n = 400_000;
        let mut acc = 0.0;
        for _ in 0..n {
            for d in 0..2 {
                let xi: f64 = rng::normal_vec(&mut r, 1)[0];
                let z = mu[d] + sigma[d] * xi;
                let ln_q = -0.5 * xi * xi - sigma[d].ln();
                let ln_p = -0.5 * z * z;
                acc += ln_q - ln_p;
            }
        }
        let mc = acc / n as f64;
        assert!(
            (mc - expected).abs() / expected < 0.01,
            "mc {mc} vs closed form {expected}"
        );
    }
}
