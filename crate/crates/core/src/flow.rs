//! Flow blocks: velocity fields integrated over [0, 1), and chains of them.
//!
//! A block realizes a transport map T(x) = x + ∫₀¹ f(x(s), s) ds with f an MLP
//! and a fixed-step Euler or RK4 scheme over S substeps. Training
//! backpropagates through the unrolled integrator (discretize-then-optimize),
//! minimizing the proximal objective E[V(T(x)) + ‖x − T(x)‖²/(2γ)] on a batch.
//! The plain and tape forward paths share kernels, so mapping a point gives
//! bitwise-identical results either way.

use crate::autodiff::{DenseArray, NodeId, Tape};
use crate::error::{Error, Result};
use crate::measures::EmpiricalMeasure;
use crate::nn::{Activation, Mlp, MlpNodes};
use crate::par;
use crate::risks::Potential;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

/// Rows per parallel chunk when pushing batches through a chain.
const PUSH_CHUNK: usize = 256;

/// MLP velocity field f(x, t; θ). When time-conditioned, t is appended as an
/// extra input coordinate. The final affine layer is zero-initialized so a
/// fresh block is the identity map.
#[derive(Debug)]
pub struct VelocityField {
    pub mlp: Mlp,
    pub time_conditioned: bool,
    dim: usize,
    evals: AtomicU64,
}

impl Clone for VelocityField {
    fn clone(&self) -> Self {
        VelocityField {
            mlp: self.mlp.clone(),
            time_conditioned: self.time_conditioned,
            dim: self.dim,
            evals: AtomicU64::new(self.evals.load(Ordering::Relaxed)),
        }
    }
}

impl VelocityField {
    pub fn new(
        dim: usize,
        hidden: &[usize],
        activation: Activation,
        time_conditioned: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let mut widths = vec![dim + usize::from(time_conditioned)];
        widths.extend_from_slice(hidden);
        widths.push(dim);
        Ok(VelocityField {
            mlp: Mlp::new(&widths, activation, true, rng)?,
            time_conditioned,
            dim,
            evals: AtomicU64::new(0),
        })
    }

    /// Exact affine field f(x) = W·x + b (no hidden layers, no time input).
    pub fn affine(dim: usize, w_rows: &[Vec<f64>], bias: &[f64]) -> Result<Self> {
        let mut rng = crate::rng::seeded(0);
        let mut field = Self::new(dim, &[], Activation::Tanh, false, &mut rng)?;
        let ids: Vec<_> = field.mlp.store.ids().collect();
        let w = DenseArray::from_rows(w_rows)?;
        if w.shape() != [dim, dim] || bias.len() != dim {
            return Err(Error::shape("affine field: W must be d×d, bias length d"));
        }
        *field.mlp.store.value_mut(ids[0]) = w;
        *field.mlp.store.value_mut(ids[1]) = DenseArray::vector(bias.to_vec());
        Ok(field)
    }

    /// Constant field f ≡ c.
    pub fn constant(c: &[f64]) -> Result<Self> {
        let d = c.len();
        let zero_rows: Vec<Vec<f64>> = (0..d).map(|_| vec![0.0; d]).collect();
        Self::affine(d, &zero_rows, c)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Per-point field evaluations so far (4·S per RK4 substep pass, etc.).
    pub fn eval_count(&self) -> u64 {
        self.evals.load(Ordering::Relaxed)
    }

    pub fn reset_eval_count(&self) {
        self.evals.store(0, Ordering::Relaxed);
    }

    fn count(&self, rows: usize) {
        self.evals.fetch_add(rows as u64, Ordering::Relaxed);
    }

    /// Plain batched evaluation of f(x, t).
    pub fn eval(&self, x: &DenseArray, t: f64) -> Result<DenseArray> {
        self.count(x.rows());
        if self.time_conditioned {
            let (n, d) = (x.rows(), x.cols());
            let mut data = Vec::with_capacity(n * (d + 1));
            for i in 0..n {
                data.extend_from_slice(x.row(i));
                data.push(t);
            }
            self.mlp.forward(&DenseArray::new(vec![n, d + 1], data)?)
        } else {
            self.mlp.forward(x)
        }
    }

    /// Tape evaluation against previously registered parameter nodes.
    pub fn eval_tape(
        &self,
        tape: &mut Tape,
        nodes: &MlpNodes,
        x: NodeId,
        t: f64,
    ) -> Result<NodeId> {
        self.count(tape.value(x).rows());
        let input = if self.time_conditioned { tape.append_time_col(x, t)? } else { x };
        self.mlp.forward_with(tape, nodes, input)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegratorMethod {
    Euler,
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub method: IntegratorMethod,
    pub substeps: usize,
}

impl IntegratorConfig {
    pub fn euler(substeps: usize) -> Self {
        IntegratorConfig { method: IntegratorMethod::Euler, substeps }
    }

    pub fn rk4(substeps: usize) -> Self {
        IntegratorConfig { method: IntegratorMethod::Rk4, substeps }
    }

    pub fn validate(&self) -> Result<()> {
        if self.substeps == 0 {
            return Err(Error::invalid("integrator needs S ≥ 1 substeps"));
        }
        Ok(())
    }
}

/// One transport block: field, scheme, proximal penalty γ used at training.
#[derive(Debug, Clone)]
pub struct FlowBlock {
    pub field: VelocityField,
    pub integrator: IntegratorConfig,
    pub gamma: f64,
}

impl FlowBlock {
    pub fn new(field: VelocityField, integrator: IntegratorConfig, gamma: f64) -> Result<Self> {
        integrator.validate()?;
        if !(gamma > 0.0) {
            return Err(Error::invalid(format!("gamma = {gamma} must be > 0")));
        }
        Ok(FlowBlock { field, integrator, gamma })
    }

    pub fn dim(&self) -> usize {
        self.field.dim()
    }

    /// Map a batch through the block.
    pub fn integrate_batch(&self, x: &DenseArray) -> Result<DenseArray> {
        Ok(self.integrate_batch_traj(x, false)?.0)
    }

    /// Map a single point; optionally return the S+1 visited states.
    pub fn integrate_point(
        &self,
        x: &[f64],
        keep_trajectory: bool,
    ) -> Result<(Vec<f64>, Option<Vec<Vec<f64>>>)> {
        let xa = DenseArray::matrix(1, x.len(), x.to_vec())?;
        let (end, traj) = self.integrate_batch_traj(&xa, keep_trajectory)?;
        Ok((
            end.data().to_vec(),
            traj.map(|states| states.into_iter().map(|s| s.data().to_vec()).collect()),
        ))
    }

    fn integrate_batch_traj(
        &self,
        x: &DenseArray,
        keep_trajectory: bool,
    ) -> Result<(DenseArray, Option<Vec<DenseArray>>)> {
        if x.cols() != self.dim() {
            return Err(Error::shape(format!(
                "block dimension {} vs input {}",
                self.dim(),
                x.cols()
            )));
        }
        let s = self.integrator.substeps;
        let h = 1.0 / s as f64;
        let mut cur = x.clone();
        let mut traj = keep_trajectory.then(|| vec![cur.clone()]);
        for step in 0..s {
            let t = step as f64 * h;
            cur = match self.integrator.method {
                IntegratorMethod::Euler => {
                    let k = self.field.eval(&cur, t)?;
                    add_scaled(&cur, &k, h)
                }
                IntegratorMethod::Rk4 => {
                    let k1 = self.field.eval(&cur, t)?;
                    let x2 = add_scaled(&cur, &k1, 0.5 * h);
                    let k2 = self.field.eval(&x2, t + 0.5 * h)?;
                    let x3 = add_scaled(&cur, &k2, 0.5 * h);
                    let k3 = self.field.eval(&x3, t + 0.5 * h)?;
                    let x4 = add_scaled(&cur, &k3, h);
                    let k4 = self.field.eval(&x4, t + h)?;
                    let s1 = add_scaled(&k1, &k2, 2.0);
                    let s2 = add_scaled(&s1, &k3, 2.0);
                    let s3 = add(&s2, &k4);
                    add_scaled(&cur, &s3, h / 6.0)
                }
            };
            if let Err(e) = cur.ensure_finite("integrate") {
                return Err(Error::NonFinite(format!("substep {step}: {e}")));
            }
            if let Some(tr) = traj.as_mut() {
                tr.push(cur.clone());
            }
        }
        Ok((cur, traj))
    }

    /// Unrolled integration on a tape (same arithmetic path as the plain one).
    pub fn integrate_tape(
        &self,
        tape: &mut Tape,
        nodes: &MlpNodes,
        x: NodeId,
    ) -> Result<NodeId> {
        let s = self.integrator.substeps;
        let h = 1.0 / s as f64;
        let mut cur = x;
        for step in 0..s {
            let t = step as f64 * h;
            cur = match self.integrator.method {
                IntegratorMethod::Euler => {
                    let k = self.field.eval_tape(tape, nodes, cur, t)?;
                    tape.add_scaled(cur, k, h)?
                }
                IntegratorMethod::Rk4 => {
                    let k1 = self.field.eval_tape(tape, nodes, cur, t)?;
                    let x2 = tape.add_scaled(cur, k1, 0.5 * h)?;
                    let k2 = self.field.eval_tape(tape, nodes, x2, t + 0.5 * h)?;
                    let x3 = tape.add_scaled(cur, k2, 0.5 * h)?;
                    let k3 = self.field.eval_tape(tape, nodes, x3, t + 0.5 * h)?;
                    let x4 = tape.add_scaled(cur, k3, h)?;
                    let k4 = self.field.eval_tape(tape, nodes, x4, t + h)?;
                    let s1 = tape.add_scaled(k1, k2, 2.0)?;
                    let s2 = tape.add_scaled(s1, k3, 2.0)?;
                    let s3 = tape.add(s2, k4)?;
                    tape.add_scaled(cur, s3, h / 6.0)?
                }
            };
        }
        Ok(cur)
    }
}

fn add_scaled(a: &DenseArray, b: &DenseArray, c: f64) -> DenseArray {
    let data = a.data().iter().zip(b.data()).map(|(p, q)| p + c * q).collect();
    DenseArray::new(a.shape().to_vec(), data).expect("same shape")
}

fn add(a: &DenseArray, b: &DenseArray) -> DenseArray {
    let data = a.data().iter().zip(b.data()).map(|(p, q)| p + q).collect();
    DenseArray::new(a.shape().to_vec(), data).expect("same shape")
}

/// Ordered composition T_K ∘ … ∘ T_1. An empty chain is the identity.
#[derive(Debug, Clone, Default)]
pub struct FlowChain {
    pub blocks: Vec<FlowBlock>,
}

impl FlowChain {
    pub fn new(blocks: Vec<FlowBlock>) -> Result<Self> {
        if let Some(first) = blocks.first() {
            if blocks.iter().any(|b| b.dim() != first.dim()) {
                return Err(Error::shape("all chain blocks must share one dimension"));
            }
        }
        Ok(FlowChain { blocks })
    }

    pub fn identity() -> Self {
        FlowChain { blocks: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.blocks.first().map(|b| b.dim())
    }

    pub fn push(&mut self, block: FlowBlock) -> Result<()> {
        if let Some(d) = self.dim() {
            if block.dim() != d {
                return Err(Error::shape("block dimension mismatch"));
            }
        }
        self.blocks.push(block);
        Ok(())
    }

    /// Total per-point field evaluations across blocks.
    pub fn eval_count(&self) -> u64 {
        self.blocks.iter().map(|b| b.field.eval_count()).sum()
    }

    pub fn reset_eval_count(&self) {
        for b in &self.blocks {
            b.field.reset_eval_count();
        }
    }

    pub fn map_batch(&self, x: &DenseArray) -> Result<DenseArray> {
        let mut cur = x.clone();
        for b in &self.blocks {
            cur = b.integrate_batch(&cur)?;
        }
        Ok(cur)
    }

    pub fn map_point(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut cur = x.to_vec();
        for b in &self.blocks {
            cur = b.integrate_point(&cur, false)?.0;
        }
        Ok(cur)
    }

    /// Pushforward of a measure: points move, weights and labels stay. Rows
    /// are processed in fixed-size chunks in parallel; per-row arithmetic is
    /// independent, so the result does not depend on scheduling.
    pub fn push_forward(&self, p: &EmpiricalMeasure) -> Result<EmpiricalMeasure> {
        if self.is_empty() {
            return Ok(p.clone());
        }
        if self.dim() != Some(p.dim()) {
            return Err(Error::shape("chain/measure dimension mismatch"));
        }
        let n = p.len();
        let d = p.dim();
        let n_chunks = n.div_ceil(PUSH_CHUNK);
        let chunks: Vec<Result<DenseArray>> = par::map_range(n_chunks, |c| {
            let lo = c * PUSH_CHUNK;
            let hi = (lo + PUSH_CHUNK).min(n);
            let mut data = Vec::with_capacity((hi - lo) * d);
            for i in lo..hi {
                data.extend_from_slice(p.point(i));
            }
            self.map_batch(&DenseArray::new(vec![hi - lo, d], data)?)
        });
        let mut data = Vec::with_capacity(n * d);
        for c in chunks {
            data.extend_from_slice(c?.data());
        }
        p.with_points(DenseArray::new(vec![n, d], data)?)
    }

    /// End-to-end Monge cost E_{x∼P} ‖x − T(x)‖² (squared units).
    pub fn transport_cost(&self, p: &EmpiricalMeasure) -> Result<f64> {
        let q = self.push_forward(p)?;
        Ok((0..p.len())
            .map(|i| p.weights()[i] * crate::measures::squared_dist(p.point(i), q.point(i)))
            .sum())
    }

    // ── serialization ────────────────────────────────────────────────

    /// Write `manifest.json` plus one checkpoint file per block into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut manifest = ChainManifest { format_version: 1, blocks: Vec::new() };
        for (i, b) in self.blocks.iter().enumerate() {
            let ckpt = format!("block_{i:03}.json");
            b.field.mlp.store.save(&dir.join(&ckpt))?;
            manifest.blocks.push(BlockManifest {
                widths: b.field.mlp.widths.clone(),
                activation: b.field.mlp.activation,
                time_conditioned: b.field.time_conditioned,
                method: b.integrator.method,
                substeps: b.integrator.substeps,
                gamma: b.gamma,
                checkpoint: ckpt,
            });
        }
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: ChainManifest =
            serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
        if manifest.format_version != 1 {
            return Err(Error::Unsupported(format!(
                "chain manifest version {}",
                manifest.format_version
            )));
        }
        let mut blocks = Vec::new();
        for bm in &manifest.blocks {
            let store = crate::autodiff::ParamStore::load(&dir.join(&bm.checkpoint))?;
            let mlp = Mlp::from_store(&bm.widths, bm.activation, store)?;
            let dim = *bm.widths.last().unwrap();
            let field = VelocityField {
                mlp,
                time_conditioned: bm.time_conditioned,
                dim,
                evals: AtomicU64::new(0),
            };
            blocks.push(FlowBlock::new(
                field,
                IntegratorConfig { method: bm.method, substeps: bm.substeps },
                bm.gamma,
            )?);
        }
        FlowChain::new(blocks)
    }
}

#[derive(Serialize, Deserialize)]
struct BlockManifest {
    widths: Vec<usize>,
    activation: Activation,
    time_conditioned: bool,
    method: IntegratorMethod,
    substeps: usize,
    gamma: f64,
    checkpoint: String,
}

#[derive(Serialize, Deserialize)]
struct ChainManifest {
    format_version: u32,
    blocks: Vec<BlockManifest>,
}

// ── training objective ───────────────────────────────────────────────

/// SAA of E[V(T(x)) + ‖x − T(x)‖²/(2γ)] over a weighted batch.
pub fn block_objective(
    block: &FlowBlock,
    v: &Potential,
    batch: &EmpiricalMeasure,
) -> Result<f64> {
    let mapped = block.integrate_batch(batch.points())?;
    let values = v.value_batch(&mapped, batch.labels())?;
    if values.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("potential value in block objective".into()));
    }
    let mut acc = 0.0;
    for i in 0..batch.len() {
        let w = batch.weights()[i];
        acc += w * values[i];
        acc += w * crate::measures::squared_dist(batch.point(i), mapped.row(i))
            / (2.0 * block.gamma);
    }
    Ok(acc)
}

/// Objective value plus exact gradients of the unrolled discretization,
/// accumulated into the block's parameter store.
pub fn block_objective_grad(
    block: &mut FlowBlock,
    v: &Potential,
    batch: &EmpiricalMeasure,
) -> Result<f64> {
    let mut tape = Tape::new();
    let handle = tape.bind_store();
    let nodes = block.field.mlp.register_params(&mut tape, handle)?;
    let x = tape.constant(batch.points().clone())?;
    let mapped = block.integrate_tape(&mut tape, &nodes, x)?;

    let weights = tape.constant(DenseArray::vector(batch.weights().to_vec()))?;
    let values = v.eval_on_tape(&mut tape, mapped, batch.labels())?;
    let weighted_v = tape.mul(values, weights)?;
    let risk_term = tape.sum(weighted_v)?;

    let diff = tape.sub(x, mapped)?;
    let sq = tape.row_squared_norm(diff)?;
    let weighted_sq = tape.mul(sq, weights)?;
    let cost_sum = tape.sum(weighted_sq)?;
    let objective = tape.add_scaled(risk_term, cost_sum, 1.0 / (2.0 * block.gamma))?;

    let value = tape.value(objective).scalar_value()?;
    tape.backward_scalar(objective)?;
    tape.accumulate_param_grads(handle, &mut block.field.mlp.store)?;
    Ok(value)
}
