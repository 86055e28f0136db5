//! Dense layers over the autodiff graph.

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::rng;

/// Weight initialization family. Scaled-normal draws with std
/// `gain / sqrt(fan_in)`; biases start at zero.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// gain sqrt(2), for relu-family layers.
    He,
    /// gain 1, for linear output heads.
    Linear,
}

impl Init {
    fn gain(self) -> f64 {
        match self {
            Init::He => std::f64::consts::SQRT_2,
            Init::Linear => 1.0,
        }
    }
}

/// A fully-connected layer `x W + b` with `W: [in, out]`, `b: [out]`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    pub fn register(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        init: Init,
    ) -> Dense {
        let std = init.gain() / (in_dim as f64).sqrt();
        let mut w = rng::normal_tensor(rng, vec![in_dim, out_dim]);
        for v in w.data_mut() {
            *v *= std;
        }
        let wid = store.register(format!("{name}.w"), w);
        // Small nonzero bias init keeps pre-activations off the exact relu
        // kink (zero biases pin dead rows at 0.0, where one-sided analytic
        // gradients and central differences legitimately disagree).
        let mut b = rng::normal_tensor(rng, vec![out_dim]);
        for v in b.data_mut() {
            *v *= 0.01;
        }
        let bid = store.register(format!("{name}.b"), b);
        Dense {
            w: wid,
            b: bid,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.affine(x, w, b)
    }
}
