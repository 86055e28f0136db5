//! Named parameter tensors with accumulated gradients and Adam state.
//!
//! Registration order is fixed by model construction order and defines the
//! serialization layout of checkpoints, so two runs with the same config
//! register identical stores.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
struct Slot {
    name: String,
    value: Arc<Tensor>,
    grad: Tensor,
    m: Tensor,
    v: Tensor,
}

/// All trainable tensors of a model, in registration order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    slots: Vec<Slot>,
    adam_step: u64,
}

/// Per-graph gradient buffer, indexed by parameter id.
pub type GradBuffer = Vec<Option<Tensor>>;

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let id = ParamId(self.slots.len());
        let zeros = Tensor::zeros(value.shape().to_vec());
        self.slots.push(Slot {
            name: name.into(),
            value: Arc::new(value),
            grad: zeros.clone(),
            m: zeros.clone(),
            v: zeros,
        });
        id
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.slots[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Arc<Tensor> {
        &self.slots[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.slots[id.0].grad
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor) {
        assert_eq!(
            value.shape(),
            self.slots[id.0].value.shape(),
            "parameter shape is fixed after registration"
        );
        self.slots[id.0].value = Arc::new(value);
    }

    pub fn iter_ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.slots.len()).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.slots.iter().map(|s| s.value.numel()).sum()
    }

    pub fn new_grad_buffer(&self) -> GradBuffer {
        vec![None; self.slots.len()]
    }

    /// Add a per-graph gradient buffer into the accumulated gradients.
    pub fn accumulate(&mut self, buf: &GradBuffer) {
        assert_eq!(buf.len(), self.slots.len());
        for (slot, g) in self.slots.iter_mut().zip(buf) {
            if let Some(g) = g {
                for (acc, &x) in slot.grad.data_mut().iter_mut().zip(g.data()) {
                    *acc += x;
                }
            }
        }
    }

    /// Scale accumulated gradients (e.g. by 1/batch).
    pub fn scale_grads(&mut self, factor: f64) {
        for slot in &mut self.slots {
            for g in slot.grad.data_mut() {
                *g *= factor;
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for slot in &mut self.slots {
            for g in slot.grad.data_mut() {
                *g = 0.0;
            }
        }
    }

    /// One Adam update from the accumulated gradients.
    ///
    /// Bias-corrected first/second moments; moment state persists per
    /// parameter. A non-finite gradient aborts before any state changes.
    pub fn adam_step(&mut self, lr: f64, betas: (f64, f64), eps: f64) -> Result<()> {
        for slot in &self.slots {
            if !slot.grad.all_finite() {
                return Err(Error::NonFinite {
                    context: format!("gradient of parameter '{}'", slot.name),
                });
            }
        }
        self.adam_step += 1;
        let t = self.adam_step as i32;
        let (b1, b2) = betas;
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        for slot in &mut self.slots {
            let value = Arc::make_mut(&mut slot.value);
            let data = value.data_mut();
            let grad = slot.grad.data();
            let m = slot.m.data_mut();
            let v = slot.v.data_mut();
            for i in 0..data.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
                v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Flatten all parameter values in registration order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.scalar_count());
        for slot in &self.slots {
            out.extend_from_slice(slot.value.data());
        }
        out
    }

    /// Load flat values in registration order; length must match exactly.
    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        let expected = self.scalar_count();
        if flat.len() != expected {
            return Err(Error::Checkpoint(format!(
                "parameter blob holds {} values, expected {}",
                flat.len(),
                expected
            )));
        }
        let mut offset = 0;
        for slot in &mut self.slots {
            let n = slot.value.numel();
            let t = Tensor::new(slot.value.shape().to_vec(), flat[offset..offset + n].to_vec())
                .expect("shape/len consistent");
            slot.value = Arc::new(t);
            offset += n;
        }
        Ok(())
    }

    /// Parameter manifest: (name, shape) in registration order.
    pub fn manifest(&self) -> Vec<(String, Vec<usize>)> {
        self.slots
            .iter()
            .map(|s| (s.name.clone(), s.value.shape().to_vec()))
            .collect()
    }
}
