//! The noise predictor: time embedding, context fusion, and per-point
//! noise estimation over the noisy goal cloud.
//!
//! The context vector concatenates the goal latent and the two conditioning
//! features, passes through the fusion MLP, and picks up a 3-D time
//! embedding; at the default widths that is a 515-dimensional vector. The
//! per-point trunk is shared across points, so the output permutes exactly
//! with its input cloud.
//!
//! Two fusion modes are supported. `output-gate` is the literal composite
//! form `eps' = h(x) .* sigmoid(Wg phi) + Wb phi`, a single 3-D gate and
//! bias for all points. `per-layer-gate` gates and biases every hidden
//! trunk layer with layer-specific projections of phi, which gives the
//! context far more than 6 scalars of influence per step; the final trunk
//! layer stays linear.

use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{Dense, Init};
use crate::params::ParamStore;
use crate::schedule::DiffusionSchedule;
use crate::tensor::Tensor;

pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FusionMode {
    #[serde(rename = "output-gate")]
    OutputGate,
    #[serde(rename = "per-layer-gate")]
    PerLayerGate,
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FusionMode::OutputGate => write!(f, "output-gate"),
            FusionMode::PerLayerGate => write!(f, "per-layer-gate"),
        }
    }
}

impl FromStr for FusionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "output-gate" => Ok(FusionMode::OutputGate),
            "per-layer-gate" => Ok(FusionMode::PerLayerGate),
            other => Err(Error::Config(format!(
                "unknown fusion mode '{other}' (expected 'output-gate' or 'per-layer-gate')"
            ))),
        }
    }
}

/// 3-D time embedding `(t/T, sqrt(abar_t), sqrt(1 - abar_t))`: the exact
/// coefficients the forward kernel applies at step `t`, all in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeEmbedding(pub [f64; 3]);

pub fn embed_time(sched: &DiffusionSchedule, t: usize) -> Result<TimeEmbedding> {
    if t < 1 || t > sched.t_steps() {
        return Err(Error::StepOutOfRange {
            t,
            t_max: sched.t_steps(),
        });
    }
    let abar = sched.alpha_bar(t)?;
    Ok(TimeEmbedding([
        t as f64 / sched.t_steps() as f64,
        abar.sqrt(),
        (1.0 - abar).sqrt(),
    ]))
}

#[derive(Debug, Clone)]
pub struct NoisePredictor {
    fusion1: Dense,
    fusion2: Dense,
    /// Output-gate heads (empty in per-layer mode).
    gate_head: Option<Dense>,
    bias_head: Option<Dense>,
    trunk: Vec<Dense>,
    /// Per-hidden-layer (gate, bias) projections of phi (per-layer mode).
    layer_gates: Vec<(Dense, Dense)>,
    mode: FusionMode,
    fusion_hidden: usize,
}

impl NoisePredictor {
    pub fn register(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        latent_dim: usize,
        feature_dim: usize,
        fusion_hidden: usize,
        trunk_widths: [usize; 3],
        mode: FusionMode,
    ) -> NoisePredictor {
        let fusion_in = latent_dim + 2 * feature_dim;
        let fusion1 = Dense::register(
            store,
            rng,
            &format!("{prefix}.fusion1"),
            fusion_in,
            fusion_hidden,
            Init::He,
        );
        let fusion2 = Dense::register(
            store,
            rng,
            &format!("{prefix}.fusion2"),
            fusion_hidden,
            fusion_hidden,
            Init::He,
        );
        let phi_dim = fusion_hidden + 3;

        let mut trunk = Vec::new();
        let mut in_dim = 3;
        for (i, &w) in trunk_widths.iter().enumerate() {
            trunk.push(Dense::register(
                store,
                rng,
                &format!("{prefix}.h{i}"),
                in_dim,
                w,
                Init::He,
            ));
            in_dim = w;
        }
        trunk.push(Dense::register(
            store,
            rng,
            &format!("{prefix}.h_out"),
            in_dim,
            3,
            Init::Linear,
        ));

        let (gate_head, bias_head, layer_gates) = match mode {
            FusionMode::OutputGate => {
                let gate = Dense::register(
                    store,
                    rng,
                    &format!("{prefix}.gate"),
                    phi_dim,
                    3,
                    Init::Linear,
                );
                let bias = Dense::register(
                    store,
                    rng,
                    &format!("{prefix}.bias"),
                    phi_dim,
                    3,
                    Init::Linear,
                );
                (Some(gate), Some(bias), Vec::new())
            }
            FusionMode::PerLayerGate => {
                let mut gates = Vec::new();
                for (i, &w) in trunk_widths.iter().enumerate() {
                    let gate = Dense::register(
                        store,
                        rng,
                        &format!("{prefix}.gate{i}"),
                        phi_dim,
                        w,
                        Init::Linear,
                    );
                    let bias = Dense::register(
                        store,
                        rng,
                        &format!("{prefix}.bias{i}"),
                        phi_dim,
                        w,
                        Init::Linear,
                    );
                    gates.push((gate, bias));
                }
                (None, None, gates)
            }
        };

        NoisePredictor {
            fusion1,
            fusion2,
            gate_head,
            bias_head,
            trunk,
            layer_gates,
            mode,
            fusion_hidden,
        }
    }

    pub fn mode(&self) -> FusionMode {
        self.mode
    }

    pub fn phi_dim(&self) -> usize {
        self.fusion_hidden + 3
    }

    /// Fusion MLP over `concat(z, psi_c, psi_T)`, before the time embedding
    /// is appended. Constant per sample during reverse diffusion, so
    /// callers may compute it once and reuse it across steps.
    pub fn fuse_partial(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        z: Var,
        psi_c: Var,
        psi_t: Var,
    ) -> Result<Var> {
        let zc = g.concat_last(z, psi_c)?;
        let all = g.concat_last(zc, psi_t)?;
        let h = self.fusion1.forward(g, store, all)?;
        let h = g.relu(h);
        let h = self.fusion2.forward(g, store, h)?;
        Ok(g.relu(h))
    }

    /// Append the time embedding to a fused context, producing phi.
    pub fn phi_from_partial(&self, g: &mut Graph, fused: Var, temb: TimeEmbedding) -> Result<Var> {
        let t_in = g.input(Tensor::vector(temb.0.to_vec()));
        g.concat_last(fused, t_in)
    }

    /// Full context vector `phi = f(t, z, psi_c, psi_T)`.
    pub fn fuse_context(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        temb: TimeEmbedding,
        z: Var,
        psi_c: Var,
        psi_t: Var,
    ) -> Result<Var> {
        let fused = self.fuse_partial(g, store, z, psi_c, psi_t)?;
        self.phi_from_partial(g, fused, temb)
    }

    /// Per-point noise prediction from phi and the noisy cloud `[n, 3]`.
    pub fn predict_from_phi(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        phi: Var,
        cloud_t: Var,
    ) -> Result<Var> {
        let shape = g.value(cloud_t).shape().to_vec();
        if shape.len() != 2 || shape[1] != 3 {
            return Err(Error::invalid(
                "predict_from_phi",
                format!("expected [n,3] cloud, got {shape:?}"),
            ));
        }
        if g.value(phi).numel() != self.phi_dim() {
            return Err(Error::invalid(
                "predict_from_phi",
                format!(
                    "phi has {} entries, expected {}",
                    g.value(phi).numel(),
                    self.phi_dim()
                ),
            ));
        }
        match self.mode {
            FusionMode::OutputGate => {
                let mut x = cloud_t;
                let hidden = self.trunk.len() - 1;
                for layer in &self.trunk[..hidden] {
                    x = layer.forward(g, store, x)?;
                    x = g.leaky_relu(x, LEAKY_SLOPE);
                }
                let h = self.trunk[hidden].forward(g, store, x)?;
                let gate_logits = self
                    .gate_head
                    .as_ref()
                    .expect("output-gate mode has a gate head")
                    .forward(g, store, phi)?;
                let gate = g.sigmoid(gate_logits);
                let bias = self
                    .bias_head
                    .as_ref()
                    .expect("output-gate mode has a bias head")
                    .forward(g, store, phi)?;
                let gated = g.mul(h, gate)?;
                g.add(gated, bias)
            }
            FusionMode::PerLayerGate => {
                let mut x = cloud_t;
                for (layer, (gate_proj, bias_proj)) in
                    self.trunk.iter().zip(&self.layer_gates)
                {
                    x = layer.forward(g, store, x)?;
                    x = g.leaky_relu(x, LEAKY_SLOPE);
                    let gate_logits = gate_proj.forward(g, store, phi)?;
                    let gate = g.sigmoid(gate_logits);
                    let bias = bias_proj.forward(g, store, phi)?;
                    x = g.mul(x, gate)?;
                    x = g.add(x, bias)?;
                }
                let last = self.trunk.last().expect("trunk is non-empty");
                last.forward(g, store, x)
            }
        }
    }

    /// `eps' = mu_theta(t, cloud_t, z, psi_c, psi_T)`: the composite noise
    /// prediction of the model at step `t`.
    #[allow(clippy::too_many_arguments)]
    pub fn predict_noise(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        sched: &DiffusionSchedule,
        t: usize,
        cloud_t: Var,
        z: Var,
        psi_c: Var,
        psi_t: Var,
    ) -> Result<Var> {
        let temb = embed_time(sched, t)?;
        let phi = self.fuse_context(g, store, temb, z, psi_c, psi_t)?;
        self.predict_from_phi(g, store, phi, cloud_t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    const FD: usize = 16;
    const LD: usize = 8;

    fn tiny(mode: FusionMode) -> (ParamStore, NoisePredictor) {
        let mut store = ParamStore::new();
        let mut r = rng::stream(41);
        let np = NoisePredictor::register(&mut store, &mut r, "pred", LD, FD, 2 * FD, [4, 8, 4], mode);
        (store, np)
    }

    fn rand_context(seed: u64) -> (Tensor, Tensor, Tensor) {
        let mut r = rng::stream(seed);
        (
            rng::normal_tensor(&mut r, vec![LD]),
            rng::normal_tensor(&mut r, vec![FD]),
            rng::normal_tensor(&mut r, vec![FD]),
        )
    }

    #[test]
    fn time_embedding_components() {
        let s = DiffusionSchedule::default_schedule();
        let e = embed_time(&s, 100).unwrap();
        let abar = s.alpha_bar(100).unwrap();
        assert_eq!(e.0[0], 1.0);
        assert_eq!(e.0[1], abar.sqrt());
        assert_eq!(e.0[2], (1.0 - abar).sqrt());
        for t in 1..=100 {
            let e = embed_time(&s, t).unwrap();
            assert!(e.0.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        assert!(embed_time(&s, 0).is_err());
        assert!(embed_time(&s, 101).is_err());
    }

    #[test]
    fn phi_has_fusion_hidden_plus_three_dims() {
        for mode in [FusionMode::OutputGate, FusionMode::PerLayerGate] {
            let (store, np) = tiny(mode);
            let s = DiffusionSchedule::default_schedule();
            let (z, pc, pt) = rand_context(3);
            let mut g = Graph::new();
            let (zv, cv, tv) = (g.input(z), g.input(pc), g.input(pt));
            let phi = np
                .fuse_context(&mut g, &store, embed_time(&s, 17).unwrap(), zv, cv, tv)
                .unwrap();
            assert_eq!(g.value(phi).numel(), 2 * FD + 3);
            assert_eq!(np.phi_dim(), 2 * FD + 3);
        }
    }

    #[test]
    fn default_widths_give_515_dim_phi() {
        let mut store = ParamStore::new();
        let mut r = rng::stream(42);
        let np = NoisePredictor::register(
            &mut store,
            &mut r,
            "pred",
            256,
            256,
            512,
            [128, 256, 128],
            FusionMode::OutputGate,
        );
        assert_eq!(np.phi_dim(), 515);
    }

    #[test]
    fn changing_context_feature_changes_phi() {
        let (store, np) = tiny(FusionMode::OutputGate);
        let s = DiffusionSchedule::default_schedule();
        let (z, pc, pt) = rand_context(4);
        let mut pt2 = pt.clone();
        pt2.data_mut()[0] += 1.0;
        let run = |ctx: Tensor| {
            let mut g = Graph::new();
            let (zv, cv, tv) = (g.input(z.clone()), g.input(pc.clone()), g.input(ctx));
            let phi = np
                .fuse_context(&mut g, &store, embed_time(&s, 5).unwrap(), zv, cv, tv)
                .unwrap();
            g.value(phi).data().to_vec()
        };
        let a = run(pt.clone());
        let b = run(pt2);
        let c = run(pt);
        assert_ne!(a, b);
        assert_eq!(a, c); // determinism
    }

    #[test]
    fn predictor_output_matches_cloud_shape_and_permutes() {
        for mode in [FusionMode::OutputGate, FusionMode::PerLayerGate] {
            let (store, np) = tiny(mode);
            let s = DiffusionSchedule::default_schedule();
            let (z, pc, pt) = rand_context(5);
            let mut r = rng::stream(6);
            let cloud = rng::normal_tensor(&mut r, vec![10, 3]);
            let perm: Vec<usize> = vec![3, 1, 4, 0, 9, 7, 2, 8, 6, 5];
            let mut permuted = Vec::with_capacity(30);
            for &i in &perm {
                permuted.extend_from_slice(&cloud.data()[i * 3..(i + 1) * 3]);
            }
            let cloud_p = Tensor::new(vec![10, 3], permuted).unwrap();

            let run = |c: &Tensor| {
                let mut g = Graph::new();
                let (zv, cv, tv) = (g.input(z.clone()), g.input(pc.clone()), g.input(pt.clone()));
                let cl = g.input(c.clone());
                let out = np
                    .predict_noise(&mut g, &store, &s, 12, cl, zv, cv, tv)
                    .unwrap();
                assert_eq!(g.value(out).shape(), c.shape());
                g.value(out).data().to_vec()
            };
            let base = run(&cloud);
            let permuted_out = run(&cloud_p);
            for (new_row, &src_row) in perm.iter().enumerate() {
                for c in 0..3 {
                    assert_eq!(
                        permuted_out[new_row * 3 + c].to_bits(),
                        base[src_row * 3 + c].to_bits(),
                        "row {new_row} axis {c} in mode {mode}"
                    );
                }
            }
        }
    }

    #[test]
    fn annihilated_gate_leaves_only_bias() {
        let (mut store, np) = tiny(FusionMode::OutputGate);
        let gate = np.gate_head.as_ref().unwrap();
        // Force the gate logits to -inf territory: sigmoid underflows to 0.
        store.set_value(gate.w, Tensor::zeros(vec![np.phi_dim(), 3]));
        store.set_value(gate.b, Tensor::vector(vec![-1e9; 3]));
        let s = DiffusionSchedule::default_schedule();
        let (z, pc, pt) = rand_context(7);
        let mut r = rng::stream(8);
        let cloud = rng::normal_tensor(&mut r, vec![6, 3]);

        let mut g = Graph::new();
        let (zv, cv, tv) = (g.input(z), g.input(pc), g.input(pt));
        let cl = g.input(cloud);
        let temb = embed_time(&s, 3).unwrap();
        let phi = np.fuse_context(&mut g, &store, temb, zv, cv, tv).unwrap();
        let out = np.predict_from_phi(&mut g, &store, phi, cl).unwrap();
        let bias_head = np.bias_head.as_ref().unwrap();
        let bias = bias_head.forward(&mut g, &store, phi).unwrap();
        let bias_vals = g.value(bias).data().to_vec();
        for row in g.value(out).data().chunks(3) {
            assert_eq!(row, &bias_vals[..]);
        }
    }

    #[test]
    fn output_gate_residual_recovers_trunk() {
        // (eps' - bias) / gate == h(x) wherever the gate is nonzero.
        let (store, np) = tiny(FusionMode::OutputGate);
        let s = DiffusionSchedule::default_schedule();
        let (z, pc, pt) = rand_context(9);
        let mut r = rng::stream(10);
        let cloud = rng::normal_tensor(&mut r, vec![5, 3]);

        let mut g = Graph::new();
        let (zv, cv, tv) = (g.input(z), g.input(pc), g.input(pt));
        let cl = g.input(cloud.clone());
        let temb = embed_time(&s, 9).unwrap();
        let phi = np.fuse_context(&mut g, &store, temb, zv, cv, tv).unwrap();
        let out = np.predict_from_phi(&mut g, &store, phi, cl).unwrap();

        // Recompute trunk, gate and bias separately.
        let cl2 = g.input(cloud);
        let mut x = cl2;
        for layer in &np.trunk[..np.trunk.len() - 1] {
            x = layer.forward(&mut g, &store, x).unwrap();
            x = g.leaky_relu(x, LEAKY_SLOPE);
        }
        let h = np.trunk[np.trunk.len() - 1]
            .forward(&mut g, &store, x)
            .unwrap();
        let gate_logits = np
            .gate_head
            .as_ref()
            .unwrap()
            .forward(&mut g, &store, phi)
            .unwrap();
        let gate = g.sigmoid(gate_logits);
        let bias = np
            .bias_head
            .as_ref()
            .unwrap()
            .forward(&mut g, &store, phi)
            .unwrap();

        let out_v = g.value(out).data();
        let h_v = g.value(h).data();
        let gate_v = g.value(gate).data();
        let bias_v = g.value(bias).data();
        for i in 0..5 {
            for c in 0..3 {
                if gate_v[c].abs() > 1e-12 {
                    let recovered = (out_v[i * 3 + c] - bias_v[c]) / gate_v[c];
                    assert!((recovered - h_v[i * 3 + c]).abs() < 1e-9);
                }
            }
        }
    }
}
