//! Reverse-mode automatic differentiation over a linear tape.
//!
//! A `Graph` records every operation of a forward pass in insertion order;
//! `backward` replays the tape in reverse, accumulating gradients of a
//! scalar loss with respect to every bound parameter. Values are immutable
//! once produced. Everything is sequential and bit-deterministic: identical
//! inputs and parameters give identical forward values and gradients.
//!
//! Supported operations cover what the models need: affine layers,
//! elementwise nonlinearities, concatenation along the last axis, max over
//! the set axis, full reductions, and a Chamfer-to-constant loss. No
//! higher-order gradients, no control-flow differentiation.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::params::{GradBuffer, ParamId, ParamStore};
use crate::tensor::{gemm_a_bt_acc, gemm_acc, gemm_at_b_acc, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    /// `[m,k] x [k,n]`, or `[k] x [k,n] -> [n]`.
    MatMul { a: Var, b: Var },
    /// Same shape, or `b` broadcast as a row over the rows of `a`.
    Add { a: Var, b: Var, broadcast: bool },
    Sub { a: Var, b: Var },
    /// Same shape, or `b` broadcast as a row over the rows of `a`.
    Mul { a: Var, b: Var, broadcast: bool },
    Scale { x: Var, c: f64 },
    AddConst { x: Var },
    Relu { x: Var },
    LeakyRelu { x: Var, alpha: f64 },
    Sigmoid { x: Var },
    Tanh { x: Var },
    Softplus { x: Var },
    Ln { x: Var },
    /// Concatenate along the trailing axis (vectors or equal-row matrices).
    ConcatLast { a: Var, b: Var },
    /// Max over the set axis: `[n, d] -> [d]`; ties to the lowest row index.
    MaxSet { x: Var, argmax: Vec<usize> },
    Sum { x: Var },
    Mean { x: Var },
    /// Sum of squared entries (squared norm).
    SumSq { x: Var },
    /// Same data, new shape.
    Reshape { x: Var },
    /// Chamfer distance to a fixed target cloud; gradients flow through the
    /// saved nearest-neighbor assignments.
    ChamferToConst {
        x: Var,
        target: Arc<Tensor>,
        nn_xt: Vec<usize>,
        nn_tx: Vec<usize>,
    },
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
}

/// A recorded forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn stable_softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Arc<Tensor> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.push_arc(Arc::new(value), op)
    }

    fn push_arc(&mut self, value: Arc<Tensor>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Bind a constant input (no gradient is collected for it).
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input)
    }

    pub fn input_arc(&mut self, value: Arc<Tensor>) -> Var {
        self.push_arc(value, Op::Input)
    }

    /// Bind a parameter leaf; its gradient lands in the grad buffer.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push_arc(Arc::clone(store.value(id)), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a).clone(), self.value(b).clone());
        let (m, k) = match av.shape() {
            [m, k] => (*m, *k),
            [k] => (1, *k),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "matmul",
                    left: av.shape().to_vec(),
                    right: bv.shape().to_vec(),
                })
            }
        };
        let (k2, n) = match bv.shape() {
            [k2, n] => (*k2, *n),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "matmul",
                    left: av.shape().to_vec(),
                    right: bv.shape().to_vec(),
                })
            }
        };
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(m, k, n, av.data(), bv.data(), &mut out);
        let shape = if av.rank() == 1 { vec![n] } else { vec![m, n] };
        Ok(self.push(
            Tensor::new(shape, out).expect("gemm output shape"),
            Op::MatMul { a, b },
        ))
    }

    fn binary_shapes(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
        allow_broadcast: bool,
    ) -> Result<bool> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa == sb {
            return Ok(false);
        }
        if allow_broadcast && sa.len() == 2 && sb.len() == 1 && sa[1] == sb[0] {
            return Ok(true);
        }
        Err(Error::ShapeMismatch {
            op,
            left: sa.to_vec(),
            right: sb.to_vec(),
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let broadcast = self.binary_shapes("add", a, b, true)?;
        let (av, bv) = (self.value(a).clone(), self.value(b).clone());
        let value = if broadcast {
            let cols = bv.numel();
            let mut data = av.data().to_vec();
            for row in data.chunks_mut(cols) {
                for (x, &y) in row.iter_mut().zip(bv.data()) {
                    *x += y;
                }
            }
            Tensor::new(av.shape().to_vec(), data).expect("add shape")
        } else {
            let data = av
                .data()
                .iter()
                .zip(bv.data())
                .map(|(&x, &y)| x + y)
                .collect();
            Tensor::new(av.shape().to_vec(), data).expect("add shape")
        };
        Ok(self.push(value, Op::Add { a, b, broadcast }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_shapes("sub", a, b, false)?;
        let (av, bv) = (self.value(a).clone(), self.value(b).clone());
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| x - y)
            .collect();
        let value = Tensor::new(av.shape().to_vec(), data).expect("sub shape");
        Ok(self.push(value, Op::Sub { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let broadcast = self.binary_shapes("mul", a, b, true)?;
        let (av, bv) = (self.value(a).clone(), self.value(b).clone());
        let value = if broadcast {
            let cols = bv.numel();
            let mut data = av.data().to_vec();
            for row in data.chunks_mut(cols) {
                for (x, &y) in row.iter_mut().zip(bv.data()) {
                    *x *= y;
                }
            }
            Tensor::new(av.shape().to_vec(), data).expect("mul shape")
        } else {
            let data = av
                .data()
                .iter()
                .zip(bv.data())
                .map(|(&x, &y)| x * y)
                .collect();
            Tensor::new(av.shape().to_vec(), data).expect("mul shape")
        };
        Ok(self.push(value, Op::Mul { a, b, broadcast }))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).map(|v| v * c);
        self.push(value, Op::Scale { x, c })
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).map(|v| v + c);
        self.push(value, Op::AddConst { x })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        self.push(value, Op::Relu { x })
    }

    pub fn leaky_relu(&mut self, x: Var, alpha: f64) -> Var {
        let value = self.value(x).map(|v| if v > 0.0 { v } else { alpha * v });
        self.push(value, Op::LeakyRelu { x, alpha })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(stable_sigmoid);
        self.push(value, Op::Sigmoid { x })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::tanh);
        self.push(value, Op::Tanh { x })
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let value = self.value(x).map(stable_softplus);
        self.push(value, Op::Softplus { x })
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::ln);
        self.push(value, Op::Ln { x })
    }

    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a).clone(), self.value(b).clone());
        let value = match (av.shape(), bv.shape()) {
            ([x], [y]) => {
                let mut data = Vec::with_capacity(x + y);
                data.extend_from_slice(av.data());
                data.extend_from_slice(bv.data());
                Tensor::vector(data)
            }
            ([r1, c1], [r2, c2]) if r1 == r2 => {
                let mut data = Vec::with_capacity(r1 * (c1 + c2));
                for i in 0..*r1 {
                    data.extend_from_slice(&av.data()[i * c1..(i + 1) * c1]);
                    data.extend_from_slice(&bv.data()[i * c2..(i + 1) * c2]);
                }
                Tensor::new(vec![*r1, c1 + c2], data).expect("concat shape")
            }
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "concat_last",
                    left: av.shape().to_vec(),
                    right: bv.shape().to_vec(),
                })
            }
        };
        Ok(self.push(value, Op::ConcatLast { a, b }))
    }

    /// Max over the set axis of an `[n, d]` matrix. Ties break to the
    /// lowest row index, which also receives the whole gradient.
    pub fn max_set(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x).clone();
        let [n, d] = *xv.shape() else {
            return Err(Error::invalid(
                "max_set",
                format!("expects a matrix, got shape {:?}", xv.shape()),
            ));
        };
        if n == 0 {
            return Err(Error::invalid("max_set", "empty set axis"));
        }
        let mut best = xv.data()[..d].to_vec();
        let mut argmax = vec![0usize; d];
        for i in 1..n {
            let row = &xv.data()[i * d..(i + 1) * d];
            for (j, &v) in row.iter().enumerate() {
                if v > best[j] {
                    best[j] = v;
                    argmax[j] = i;
                }
            }
        }
        Ok(self.push(Tensor::vector(best), Op::MaxSet { x, argmax }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total: f64 = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum { x })
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x).clone();
        let total: f64 = v.data().iter().sum();
        self.push(Tensor::scalar(total / v.numel() as f64), Op::Mean { x })
    }

    /// Squared norm: sum of squared entries.
    pub fn sumsq(&mut self, x: Var) -> Var {
        let total: f64 = self.value(x).data().iter().map(|&v| v * v).sum();
        self.push(Tensor::scalar(total), Op::SumSq { x })
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let xv = self.value(x).clone();
        let numel: usize = shape.iter().product();
        if numel != xv.numel() {
            return Err(Error::invalid(
                "reshape",
                format!("cannot view {:?} as {:?}", xv.shape(), shape),
            ));
        }
        let value = Tensor::new(shape, xv.data().to_vec()).expect("checked numel");
        Ok(self.push(value, Op::Reshape { x }))
    }

    /// `x W + b` with `b` broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add(xw, b)
    }

    /// Symmetric Chamfer distance between an `[n,3]` prediction and a fixed
    /// target cloud: mean of squared nearest-neighbor distances in both
    /// directions. Per-direction sums are sorted before adding so the value
    /// is exactly permutation-invariant.
    pub fn chamfer_to_const(&mut self, x: Var, target: Arc<Tensor>) -> Result<Var> {
        let xv = self.value(x).clone();
        if xv.rank() != 2 || xv.cols() != 3 || target.rank() != 2 || target.cols() != 3 {
            return Err(Error::ShapeMismatch {
                op: "chamfer_to_const",
                left: xv.shape().to_vec(),
                right: target.shape().to_vec(),
            });
        }
        if xv.rows() == 0 || target.rows() == 0 {
            return Err(Error::EmptyCloud("chamfer_to_const"));
        }
        let (d_xt, nn_xt) = directed_sq_nn(xv.data(), target.data());
        let (d_tx, nn_tx) = directed_sq_nn(target.data(), xv.data());
        let value = sorted_mean(&d_xt) + sorted_mean(&d_tx);
        Ok(self.push(
            Tensor::scalar(value),
            Op::ChamferToConst {
                x,
                target,
                nn_xt,
                nn_tx,
            },
        ))
    }

    /// Gradients of a scalar loss with respect to all bound parameters.
    ///
    /// Unreached parameters stay `None` (a zero gradient). Repeated calls
    /// on fresh graphs accumulate via `ParamStore::accumulate`.
    pub fn backward(&self, loss: Var, store: &ParamStore) -> Result<GradBuffer> {
        let loss_value = self.value(loss);
        if loss_value.numel() != 1 {
            return Err(Error::NonScalar {
                op: "backward",
                shape: loss_value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(loss_value.shape().to_vec(), vec![1.0]).unwrap());

        let mut out = store.new_grad_buffer();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Input => {}
                Op::Param(id) => match &mut out[id.0] {
                    Some(acc) => {
                        for (a, &x) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a += x;
                        }
                    }
                    slot => *slot = Some(g),
                },
                Op::MatMul { a, b } => {
                    let (av, bv) = (self.value(*a).clone(), self.value(*b).clone());
                    let m = av.rows();
                    let k = av.cols();
                    let n = bv.cols();
                    {
                        // dA = g B^T: [m,n] x [k,n]^T -> [m,k]
                        let ga = self.grad_slot(&mut grads, *a);
                        gemm_a_bt_acc(m, n, k, g.data(), bv.data(), ga.data_mut());
                    }
                    let gb = self.grad_slot(&mut grads, *b);
                    gemm_at_b_acc(m, k, n, av.data(), g.data(), gb.data_mut());
                }
                Op::Add { a, b, broadcast } => {
                    {
                        let ga = self.grad_slot(&mut grads, *a);
                        for (x, &y) in ga.data_mut().iter_mut().zip(g.data()) {
                            *x += y;
                        }
                    }
                    let cols = self.value(*b).numel();
                    let gb = self.grad_slot(&mut grads, *b);
                    if *broadcast {
                        for row in g.data().chunks(cols) {
                            for (x, &y) in gb.data_mut().iter_mut().zip(row) {
                                *x += y;
                            }
                        }
                    } else {
                        for (x, &y) in gb.data_mut().iter_mut().zip(g.data()) {
                            *x += y;
                        }
                    }
                }
                Op::Sub { a, b } => {
                    {
                        let ga = self.grad_slot(&mut grads, *a);
                        for (x, &y) in ga.data_mut().iter_mut().zip(g.data()) {
                            *x += y;
                        }
                    }
                    let gb = self.grad_slot(&mut grads, *b);
                    for (x, &y) in gb.data_mut().iter_mut().zip(g.data()) {
                        *x -= y;
                    }
                }
                Op::Mul { a, b, broadcast } => {
                    let (av, bv) = (self.value(*a).clone(), self.value(*b).clone());
                    if *broadcast {
                        let cols = bv.numel();
                        {
                            let ga = self.grad_slot(&mut grads, *a);
                            for (row_idx, row) in g.data().chunks(cols).enumerate() {
                                let ga_row = &mut ga.data_mut()[row_idx * cols..(row_idx + 1) * cols];
                                for j in 0..cols {
                                    ga_row[j] += row[j] * bv.data()[j];
                                }
                            }
                        }
                        let gb = self.grad_slot(&mut grads, *b);
                        for (row_idx, row) in g.data().chunks(cols).enumerate() {
                            let a_row = &av.data()[row_idx * cols..(row_idx + 1) * cols];
                            for j in 0..cols {
                                gb.data_mut()[j] += row[j] * a_row[j];
                            }
                        }
                    } else {
                        {
                            let ga = self.grad_slot(&mut grads, *a);
                            for ((x, &y), &bvv) in
                                ga.data_mut().iter_mut().zip(g.data()).zip(bv.data())
                            {
                                *x += y * bvv;
                            }
                        }
                        let gb = self.grad_slot(&mut grads, *b);
                        for ((x, &y), &avv) in gb.data_mut().iter_mut().zip(g.data()).zip(av.data())
                        {
                            *x += y * avv;
                        }
                    }
                }
                Op::Scale { x, c } => {
                    let gx = self.grad_slot(&mut grads, *x);
                    for (o, &y) in gx.data_mut().iter_mut().zip(g.data()) {
                        *o += y * c;
                    }
                }
                Op::AddConst { x } => {
                    let gx = self.grad_slot(&mut grads, *x);
                    for (o, &y) in gx.data_mut().iter_mut().zip(g.data()) {
                        *o += y;
                    }
                }
                Op::Relu { x } => {
                    let xv = self.value(*x).clone();
                    let gx = self.grad_slot(&mut grads, *x);
                    for ((o, &y), &v) in gx.data_mut().iter_mut().zip(g.data()).zip(xv.data()) {
                        if v > 0.0 {
                            *o += y;
                        }
                    }
                }
                Op::LeakyRelu { x, alpha } => {
                    let xv = self.value(*x).clone();
                    let gx = self.grad_slot(&mut grads, *x);
                    for ((o, &y), &v) in gx.data_mut().iter_mut().zip(g.data()).zip(xv.data()) {
                        *o += if v > 0.0 { y } else { y * alpha };
                    }
                }
                Op::Sigmoid { x } => {
                    let yv = self.nodes[i].value.clone();
                    let gx = self.grad_slot(&mut grads, *x);
                    for ((o, &gy), &y) in gx.data_mut().iter_mut().zip(g.data()).zip(yv.data()) {
                        *o += gy * y * (1.0 - y);
                    }
                }
                Op::Tanh { x } => {
                    let yv = self.nodes[i].value.clone();
                    let gx = self.grad_slot(&mut grads, *x);
                    for ((o, &gy), &y) in gx.data_mut().iter_mut().zip(g.data()).zip(yv.data()) {
                        *o += gy * (1.0 - y * y);
                    }
                }
                Op::Softplus { x } => {
                    let xv = self.value(*x).clone();
                    let gx = self.grad_slot(&mut grads, *x);
                    for ((o, &gy), &v) in gx.data_mut().iter_mut().zip(g.data()).zip(xv.data()) {
                        *o += gy * stable_sigmoid(v);
                    }
                }
                Op::Ln { x } => {
                    let xv = self.value(*x).clone();
                    let gx = self.grad_slot(&mut grads, *x);
                    for ((o, &gy), &v) in gx.data_mut().iter_mut().zip(g.data()).zip(xv.data()) {
                        *o += gy / v;
                    }
                }
                Op::ConcatLast { a, b } => {
                    let (av, bv) = (self.value(*a).clone(), self.value(*b).clone());
                    let (ca, cb) = (av.cols(), bv.cols());
                    let rows = av.rows();
                    {
                        let ga = self.grad_slot(&mut grads, *a);
                        for r in 0..rows {
                            let src = &g.data()[r * (ca + cb)..r * (ca + cb) + ca];
                            let dst = &mut ga.data_mut()[r * ca..(r + 1) * ca];
                            for (o, &y) in dst.iter_mut().zip(src) {
                                *o += y;
                            }
                        }
                    }
                    let gb = self.grad_slot(&mut grads, *b);
                    for r in 0..rows {
                        let src = &g.data()[r * (ca + cb) + ca..(r + 1) * (ca + cb)];
                        let dst = &mut gb.data_mut()[r * cb..(r + 1) * cb];
                        for (o, &y) in dst.iter_mut().zip(src) {
                            *o += y;
                        }
                    }
                }
                Op::MaxSet { x, argmax } => {
                    let d = argmax.len();
                    let gx = self.grad_slot(&mut grads, *x);
                    for (j, &row) in argmax.iter().enumerate() {
                        gx.data_mut()[row * d + j] += g.data()[j];
                    }
                }
                Op::Sum { x } => {
                    let gy = g.data()[0];
                    let gx = self.grad_slot(&mut grads, *x);
                    for o in gx.data_mut() {
                        *o += gy;
                    }
                }
                Op::Mean { x } => {
                    let n = self.value(*x).numel() as f64;
                    let gy = g.data()[0] / n;
                    let gx = self.grad_slot(&mut grads, *x);
                    for o in gx.data_mut() {
                        *o += gy;
                    }
                }
                Op::SumSq { x } => {
                    let xv = self.value(*x).clone();
                    let gy = g.data()[0];
                    let gx = self.grad_slot(&mut grads, *x);
                    for (o, &v) in gx.data_mut().iter_mut().zip(xv.data()) {
                        *o += 2.0 * v * gy;
                    }
                }
                Op::Reshape { x } => {
                    let gx = self.grad_slot(&mut grads, *x);
                    for (o, &y) in gx.data_mut().iter_mut().zip(g.data()) {
                        *o += y;
                    }
                }
                Op::ChamferToConst {
                    x,
                    target,
                    nn_xt,
                    nn_tx,
                } => {
                    let xv = self.value(*x).clone();
                    let gy = g.data()[0];
                    let n_x = xv.rows() as f64;
                    let n_t = target.rows() as f64;
                    let gx = self.grad_slot(&mut grads, *x);
                    let gd = gx.data_mut();
                    for (i_x, &j_t) in nn_xt.iter().enumerate() {
                        for c in 0..3 {
                            let diff = xv.data()[i_x * 3 + c] - target.data()[j_t * 3 + c];
                            gd[i_x * 3 + c] += gy * 2.0 * diff / n_x;
                        }
                    }
                    for (j_t, &i_x) in nn_tx.iter().enumerate() {
                        for c in 0..3 {
                            let diff = xv.data()[i_x * 3 + c] - target.data()[j_t * 3 + c];
                            gd[i_x * 3 + c] += gy * 2.0 * diff / n_t;
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    #[allow(clippy::mut_from_ref)]
    fn grad_slot<'g>(&self, grads: &'g mut [Option<Tensor>], v: Var) -> &'g mut Tensor {
        grads[v.0].get_or_insert_with(|| Tensor::zeros(self.value(v).shape().to_vec()))
    }
}

/// Squared distance from each point of `from` to its nearest point of `to`,
/// plus the index of that nearest point. Ties break to the lowest index.
pub(crate) fn directed_sq_nn(from: &[f64], to: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let n_from = from.len() / 3;
    let n_to = to.len() / 3;
    let mut dists = Vec::with_capacity(n_from);
    let mut idx = Vec::with_capacity(n_from);
    for i in 0..n_from {
        let p = &from[i * 3..i * 3 + 3];
        let mut best = f64::INFINITY;
        let mut best_j = 0;
        for j in 0..n_to {
            let q = &to[j * 3..j * 3 + 3];
            let d = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
            if d < best {
                best = d;
                best_j = j;
            }
        }
        dists.push(best);
        idx.push(best_j);
    }
    (dists, idx)
}

/// Mean of values summed in sorted order, so the result does not depend on
/// input permutation.
pub(crate) fn sorted_mean(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    v.iter().sum::<f64>() / v.len() as f64
}
