//! Eager Wengert tape.
//!
//! Recording an operation computes its forward value immediately and stores it;
//! `backward` walks the recorded nodes in reverse, accumulating adjoints. Every
//! input index refers to an earlier node, so the node list is a topological
//! order of the DAG by construction. A tape is exclusively owned during
//! forward/backward; independent tapes over shared parameter values may run
//! concurrently.

use super::array::{
    affine_backward, affine_forward, log_sum_exp_rows, sigmoid, softmax_row, softplus, DenseArray,
};
use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

pub type NodeId = usize;

/// Identifies one `ParamStore` bound to a tape, so gradients recorded for
/// several stores (e.g. a trainable flow against a frozen classifier) can be
/// routed back to the right one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StoreHandle(usize);

#[derive(Debug, Clone)]
enum Op {
    /// External input; adjoint is reported but not folded into any store.
    Input,
    /// Constant (including frozen parameters); adjoint computed, never read.
    Const,
    /// Snapshot of a store parameter (registration recorded in `Tape::params`).
    Param,
    /// x·wᵀ + b
    Affine { x: NodeId, w: NodeId, b: NodeId },
    Softplus { x: NodeId, beta: f64 },
    Tanh { x: NodeId },
    Relu { x: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { x: NodeId, c: f64 },
    /// a + c·b
    AddScaled { a: NodeId, b: NodeId, c: f64 },
    AddConst { x: NodeId },
    Sum { x: NodeId },
    Mean { x: NodeId },
    /// Σ x² over all elements.
    SquaredNorm { x: NodeId },
    /// Per-row Σ x², [n, d] → [n].
    RowSquaredNorm { x: NodeId },
    /// Row-wise log-sum-exp, [n, c] → [n].
    LogSumExp { x: NodeId },
    /// Per-row cross-entropy from logits, [n, c] → [n].
    SoftmaxXent { logits: NodeId, labels: Vec<usize> },
    /// Append a constant time column, [n, d] → [n, d+1].
    AppendTimeCol { x: NodeId },
    Reshape { x: NodeId },
}

pub struct Tape {
    ops: Vec<Op>,
    values: Vec<DenseArray>,
    adjoints: Vec<DenseArray>,
    backward_done: bool,
    checked: bool,
    params: Vec<(StoreHandle, ParamId, NodeId)>,
    next_handle: usize,
}

impl Tape {
    /// Tape with NaN/Inf trapping on (the default for training and tests).
    pub fn new() -> Self {
        Self::with_checked(true)
    }

    /// Tape without finiteness scans (benchmarks).
    pub fn unchecked() -> Self {
        Self::with_checked(false)
    }

    pub fn with_checked(checked: bool) -> Self {
        Tape {
            ops: Vec::new(),
            values: Vec::new(),
            adjoints: Vec::new(),
            backward_done: false,
            checked,
            params: Vec::new(),
            next_handle: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &DenseArray {
        &self.values[id]
    }

    /// Adjoint of a node; errors until `backward` has run.
    pub fn adjoint(&self, id: NodeId) -> Result<&DenseArray> {
        if !self.backward_done {
            return Err(Error::invalid("adjoint requested before backward"));
        }
        Ok(&self.adjoints[id])
    }

    fn push(&mut self, op: Op, value: DenseArray) -> Result<NodeId> {
        if self.checked {
            value.ensure_finite(&format!("tape node {}", self.ops.len()))?;
        }
        self.ops.push(op);
        self.values.push(value);
        Ok(self.ops.len() - 1)
    }

    // ── leaves ───────────────────────────────────────────────────────

    pub fn input(&mut self, value: DenseArray) -> Result<NodeId> {
        self.push(Op::Input, value)
    }

    pub fn constant(&mut self, value: DenseArray) -> Result<NodeId> {
        self.push(Op::Const, value)
    }

    /// Bind a parameter store to this tape.
    pub fn bind_store(&mut self) -> StoreHandle {
        self.next_handle += 1;
        StoreHandle(self.next_handle - 1)
    }

    /// Register a parameter (value snapshotted now).
    pub fn param(&mut self, handle: StoreHandle, store: &ParamStore, id: ParamId) -> Result<NodeId> {
        let node = self.push(Op::Param, store.value(id).clone())?;
        self.params.push((handle, id, node));
        Ok(node)
    }

    // ── primitives ───────────────────────────────────────────────────

    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let v = affine_forward(&self.values[x], &self.values[w], &self.values[b])?;
        self.push(Op::Affine { x, w, b }, v)
    }

    pub fn softplus(&mut self, x: NodeId, beta: f64) -> Result<NodeId> {
        if beta <= 0.0 {
            return Err(Error::invalid("softplus: beta must be > 0"));
        }
        let v = self.map_unary(x, |t| softplus(t, beta));
        self.push(Op::Softplus { x, beta }, v)
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.map_unary(x, f64::tanh);
        self.push(Op::Tanh { x }, v)
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.map_unary(x, |t| t.max(0.0));
        self.push(Op::Relu { x }, v)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.zip_binary(a, b, |p, q| p + q)?;
        self.push(Op::Add { a, b }, v)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.zip_binary(a, b, |p, q| p - q)?;
        self.push(Op::Sub { a, b }, v)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.zip_binary(a, b, |p, q| p * q)?;
        self.push(Op::Mul { a, b }, v)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        let v = self.map_unary(x, |t| c * t);
        self.push(Op::Scale { x, c }, v)
    }

    /// a + c·b
    pub fn add_scaled(&mut self, a: NodeId, b: NodeId, c: f64) -> Result<NodeId> {
        let v = self.zip_binary(a, b, |p, q| p + c * q)?;
        self.push(Op::AddScaled { a, b, c }, v)
    }

    pub fn add_const(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        let v = self.map_unary(x, |t| t + c);
        self.push(Op::AddConst { x }, v)
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let s: f64 = self.values[x].data().iter().sum();
        self.push(Op::Sum { x }, DenseArray::scalar(s))
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.values[x].numel();
        if n == 0 {
            return Err(Error::invalid("mean of empty array"));
        }
        let s: f64 = self.values[x].data().iter().sum();
        self.push(Op::Mean { x }, DenseArray::scalar(s / n as f64))
    }

    pub fn squared_norm(&mut self, x: NodeId) -> Result<NodeId> {
        let s: f64 = self.values[x].data().iter().map(|v| v * v).sum();
        self.push(Op::SquaredNorm { x }, DenseArray::scalar(s))
    }

    pub fn row_squared_norm(&mut self, x: NodeId) -> Result<NodeId> {
        let a = &self.values[x];
        let (n, c) = (a.rows(), a.cols());
        let mut out = vec![0.0; n];
        for i in 0..n {
            out[i] = a.row(i).iter().map(|v| v * v).sum();
        }
        let _ = c;
        self.push(Op::RowSquaredNorm { x }, DenseArray::vector(out))
    }

    pub fn log_sum_exp(&mut self, x: NodeId) -> Result<NodeId> {
        if self.values[x].shape().len() != 2 {
            return Err(Error::shape("log_sum_exp expects a 2-D array"));
        }
        let v = log_sum_exp_rows(&self.values[x]);
        self.push(Op::LogSumExp { x }, v)
    }

    /// Per-row cross-entropy `lse(logits_i) − logits_i[labels_i]`.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let a = &self.values[logits];
        if a.shape().len() != 2 {
            return Err(Error::shape("softmax_cross_entropy expects 2-D logits"));
        }
        let (n, c) = (a.rows(), a.cols());
        if labels.len() != n {
            return Err(Error::shape(format!(
                "softmax_cross_entropy: {} labels for {} rows",
                labels.len(),
                n
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::invalid(format!("label {bad} out of range for {c} classes")));
        }
        let lse = log_sum_exp_rows(a);
        let mut out = vec![0.0; n];
        for i in 0..n {
            out[i] = lse.data()[i] - a.row(i)[labels[i]];
        }
        self.push(
            Op::SoftmaxXent { logits, labels: labels.to_vec() },
            DenseArray::vector(out),
        )
    }

    pub fn append_time_col(&mut self, x: NodeId, t: f64) -> Result<NodeId> {
        let a = &self.values[x];
        let (n, d) = (a.rows(), a.cols());
        let mut out = vec![0.0; n * (d + 1)];
        for i in 0..n {
            out[i * (d + 1)..i * (d + 1) + d].copy_from_slice(a.row(i));
            out[i * (d + 1) + d] = t;
        }
        self.push(Op::AppendTimeCol { x }, DenseArray::new(vec![n, d + 1], out)?)
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let v = self.values[x].reshape(shape)?;
        self.push(Op::Reshape { x }, v)
    }

    fn map_unary(&self, x: NodeId, f: impl Fn(f64) -> f64) -> DenseArray {
        let a = &self.values[x];
        let data = a.data().iter().map(|&t| f(t)).collect();
        DenseArray::new(a.shape().to_vec(), data).expect("same shape")
    }

    fn zip_binary(&self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Result<DenseArray> {
        let (va, vb) = (&self.values[a], &self.values[b]);
        if !va.same_shape(vb) {
            return Err(Error::shape(format!(
                "elementwise op on shapes {:?} vs {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&p, &q)| f(p, q)).collect();
        DenseArray::new(va.shape().to_vec(), data)
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Backward from a scalar output, seeding with 1.
    pub fn backward_scalar(&mut self, output: NodeId) -> Result<()> {
        self.backward(output, DenseArray::scalar(1.0))
    }

    /// Reverse pass seeding `output` with `seed`. Resets previous adjoints, so
    /// separate calls are independent.
    pub fn backward(&mut self, output: NodeId, seed: DenseArray) -> Result<()> {
        if output >= self.ops.len() {
            return Err(Error::invalid("backward: unknown output node"));
        }
        if !seed.same_shape(&self.values[output]) {
            return Err(Error::shape(format!(
                "backward seed shape {:?} vs output shape {:?}",
                seed.shape(),
                self.values[output].shape()
            )));
        }
        self.adjoints = self.values.iter().map(|v| DenseArray::zeros(v.shape().to_vec())).collect();
        self.adjoints[output] = seed;

        for id in (0..self.ops.len()).rev() {
            // Adjoint slot is swapped out to release the borrow on self.
            let dy = std::mem::replace(&mut self.adjoints[id], DenseArray::zeros(vec![]));
            self.step_backward(id, &dy);
            self.adjoints[id] = dy;
        }
        self.backward_done = true;
        Ok(())
    }

    fn step_backward(&mut self, id: NodeId, dy: &DenseArray) {
        match self.ops[id].clone() {
            Op::Input | Op::Const | Op::Param => {}
            Op::Affine { x, w, b } => {
                let mut dx = std::mem::replace(&mut self.adjoints[x], DenseArray::zeros(vec![]));
                let mut dw = std::mem::replace(&mut self.adjoints[w], DenseArray::zeros(vec![]));
                let mut db = std::mem::replace(&mut self.adjoints[b], DenseArray::zeros(vec![]));
                affine_backward(&self.values[x], &self.values[w], dy, &mut dx, &mut dw, &mut db);
                self.adjoints[x] = dx;
                self.adjoints[w] = dw;
                self.adjoints[b] = db;
            }
            Op::Softplus { x, beta } => {
                self.accumulate_pointwise(x, id, dy, |xi, _yi| sigmoid(beta * xi));
            }
            Op::Tanh { x } => {
                self.accumulate_pointwise(x, id, dy, |_xi, yi| 1.0 - yi * yi);
            }
            Op::Relu { x } => {
                self.accumulate_pointwise(x, id, dy, |xi, _yi| if xi > 0.0 { 1.0 } else { 0.0 });
            }
            Op::Add { a, b } => {
                self.axpy(a, dy, 1.0);
                self.axpy(b, dy, 1.0);
            }
            Op::Sub { a, b } => {
                self.axpy(a, dy, 1.0);
                self.axpy(b, dy, -1.0);
            }
            Op::Mul { a, b } => {
                let vb = self.values[b].clone();
                let va = self.values[a].clone();
                let da = self.adjoints[a].data_mut();
                for (d, (g, q)) in da.iter_mut().zip(dy.data().iter().zip(vb.data())) {
                    *d += g * q;
                }
                let db = self.adjoints[b].data_mut();
                for (d, (g, p)) in db.iter_mut().zip(dy.data().iter().zip(va.data())) {
                    *d += g * p;
                }
            }
            Op::Scale { x, c } => self.axpy(x, dy, c),
            Op::AddScaled { a, b, c } => {
                self.axpy(a, dy, 1.0);
                self.axpy(b, dy, c);
            }
            Op::AddConst { x } => self.axpy(x, dy, 1.0),
            Op::Sum { x } => {
                let g = dy.data()[0];
                for d in self.adjoints[x].data_mut() {
                    *d += g;
                }
            }
            Op::Mean { x } => {
                let n = self.values[x].numel() as f64;
                let g = dy.data()[0] / n;
                for d in self.adjoints[x].data_mut() {
                    *d += g;
                }
            }
            Op::SquaredNorm { x } => {
                let g = dy.data()[0];
                let vx = self.values[x].clone();
                for (d, v) in self.adjoints[x].data_mut().iter_mut().zip(vx.data()) {
                    *d += 2.0 * g * v;
                }
            }
            Op::RowSquaredNorm { x } => {
                let vx = self.values[x].clone();
                let (n, c) = (vx.rows(), vx.cols());
                let dx = self.adjoints[x].data_mut();
                for i in 0..n {
                    let g = dy.data()[i];
                    for k in 0..c {
                        dx[i * c + k] += 2.0 * g * vx.data()[i * c + k];
                    }
                }
            }
            Op::LogSumExp { x } => {
                let vx = self.values[x].clone();
                let (n, c) = (vx.rows(), vx.cols());
                let mut sm = vec![0.0; c];
                let dx = self.adjoints[x].data_mut();
                for i in 0..n {
                    softmax_row(vx.row(i), &mut sm);
                    let g = dy.data()[i];
                    for k in 0..c {
                        dx[i * c + k] += g * sm[k];
                    }
                }
            }
            Op::SoftmaxXent { logits, labels } => {
                let vx = self.values[logits].clone();
                let (n, c) = (vx.rows(), vx.cols());
                let mut sm = vec![0.0; c];
                let dx = self.adjoints[logits].data_mut();
                for i in 0..n {
                    softmax_row(vx.row(i), &mut sm);
                    let g = dy.data()[i];
                    for k in 0..c {
                        let ind = if k == labels[i] { 1.0 } else { 0.0 };
                        dx[i * c + k] += g * (sm[k] - ind);
                    }
                }
            }
            Op::AppendTimeCol { x } => {
                let (n, d1) = (dy.rows(), dy.cols());
                let d = d1 - 1;
                let dx = self.adjoints[x].data_mut();
                for i in 0..n {
                    for k in 0..d {
                        dx[i * d + k] += dy.data()[i * d1 + k];
                    }
                }
            }
            Op::Reshape { x } => {
                let dx = self.adjoints[x].data_mut();
                for (d, g) in dx.iter_mut().zip(dy.data()) {
                    *d += g;
                }
            }
        }
    }

    /// Elementwise activation backward; `local(x_i, y_i)` is the derivative.
    fn accumulate_pointwise(
        &mut self,
        x: NodeId,
        y: NodeId,
        dy: &DenseArray,
        local: impl Fn(f64, f64) -> f64,
    ) {
        let vx = self.values[x].clone();
        let vy = self.values[y].clone();
        let dx = self.adjoints[x].data_mut();
        for i in 0..dx.len() {
            dx[i] += dy.data()[i] * local(vx.data()[i], vy.data()[i]);
        }
    }

    fn axpy(&mut self, x: NodeId, dy: &DenseArray, c: f64) {
        let dx = self.adjoints[x].data_mut();
        for (d, g) in dx.iter_mut().zip(dy.data()) {
            *d += c * g;
        }
    }

    // ── parameter gradients ──────────────────────────────────────────

    /// Parameter adjoints recorded for `handle`, in registration order.
    pub fn param_grads(&self, handle: StoreHandle) -> Result<Vec<(ParamId, &DenseArray)>> {
        if !self.backward_done {
            return Err(Error::invalid("param_grads requested before backward"));
        }
        Ok(self
            .params
            .iter()
            .filter(|(h, _, _)| *h == handle)
            .map(|(_, id, node)| (*id, &self.adjoints[*node]))
            .collect())
    }

    /// Fold parameter adjoints for `handle` into `store` gradient buffers.
    pub fn accumulate_param_grads(&self, handle: StoreHandle, store: &mut ParamStore) -> Result<()> {
        for (id, grad) in self.param_grads(handle)? {
            store.accumulate_grad(id, grad)?;
        }
        store.mark_grads_ready();
        Ok(())
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}
