//! Block-wise progressive LFD training and the alternating min-max solver.
//!
//! Training proceeds block by block: block k+1 is fit on the samples mapped
//! through the already-trained blocks, each block minimizing the proximal
//! objective with its own penalty γ_k. The min-max solver alternates a few
//! flow steps against the current decision function with one risk step for
//! the decision function on the pushforward. All shuffling and initialization
//! is seeded; identical configs reproduce identical reports.

use crate::autodiff::AdamConfig;
use crate::error::{Error, Result};
use crate::flow::{block_objective, block_objective_grad, FlowBlock, FlowChain, IntegratorConfig};

use crate::measures::{w2_1d, w2_assignment, EmpiricalMeasure};
use crate::nn::Activation;
use crate::risks::{accuracy_eval, risk_eval, MLPClassifier, Potential, RiskModel};
use crate::rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// Divergence guard: abort when the objective exceeds this multiple of its
/// initial magnitude.
const DIVERGENCE_FACTOR: f64 = 1e3;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GammaSchedule {
    /// γ_k ≡ γ
    Even { gamma: f64 },
    /// γ_k = factor · γ_{k−1}
    Geometric { initial: f64, factor: f64 },
    Explicit { gammas: Vec<f64> },
}

impl GammaSchedule {
    pub fn materialize(&self, blocks: usize) -> Result<Vec<f64>> {
        let out = match self {
            GammaSchedule::Even { gamma } => vec![*gamma; blocks],
            GammaSchedule::Geometric { initial, factor } => {
                if !(*factor > 0.0) {
                    return Err(Error::invalid("geometric schedule needs factor > 0"));
                }
                let mut g = *initial;
                let mut v = Vec::with_capacity(blocks);
                for _ in 0..blocks {
                    v.push(g);
                    g *= factor;
                }
                v
            }
            GammaSchedule::Explicit { gammas } => {
                if gammas.len() != blocks {
                    return Err(Error::invalid(format!(
                        "{} gammas for {} blocks",
                        gammas.len(),
                        blocks
                    )));
                }
                gammas.clone()
            }
        };
        if out.iter().any(|&g| !(g > 0.0)) {
            return Err(Error::invalid("all γ_k must be > 0"));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam { lr: f64 },
    Sgd { lr: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LfdTrainConfig {
    pub blocks: usize,
    pub gammas: GammaSchedule,
    pub epochs_per_block: usize,
    /// None = full batch.
    pub batch_size: Option<usize>,
    pub optimizer: OptimizerKind,
    pub integrator: IntegratorConfig,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Default: time-conditioned for multi-substep RK4, plain otherwise.
    pub time_conditioned: Option<bool>,
    pub seed: u64,
    /// Stop adding blocks once the achieved radius reaches this.
    pub stop_radius: Option<f64>,
}

impl LfdTrainConfig {
    pub fn single_block(gamma: f64, epochs: usize, lr: f64, seed: u64) -> Self {
        LfdTrainConfig {
            blocks: 1,
            gammas: GammaSchedule::Even { gamma },
            epochs_per_block: epochs,
            batch_size: None,
            optimizer: OptimizerKind::Adam { lr },
            integrator: IntegratorConfig::euler(1),
            hidden: vec![64],
            activation: Activation::Tanh,
            time_conditioned: None,
            seed,
            stop_radius: None,
        }
    }

    fn time_conditioning(&self) -> bool {
        self.time_conditioned.unwrap_or(
            self.integrator.method == crate::flow::IntegratorMethod::Rk4
                && self.integrator.substeps > 1,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 {
            return Err(Error::invalid("K = 0 blocks disallowed; use K ≥ 1"));
        }
        self.integrator.validate()?;
        self.gammas.materialize(self.blocks)?;
        match self.optimizer {
            OptimizerKind::Adam { lr } | OptimizerKind::Sgd { lr } => {
                if !(lr > 0.0) {
                    return Err(Error::invalid("learning rate must be > 0"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochRecord {
    pub block: usize,
    pub epoch: usize,
    /// Full-data proximal objective before this epoch's updates.
    pub objective: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BlockRecord {
    pub block: usize,
    pub gamma: f64,
    /// E‖x − T_k(x)‖² over the block's input measure.
    pub transport_cost: f64,
    /// W2 between the block's input and output (assignment estimate).
    pub w2_estimate: f64,
    /// Mean loss r on the pushforward so far.
    pub risk: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub blocks: Vec<BlockRecord>,
    /// W2(Q, P) between the original measure and the final pushforward.
    pub achieved_w2: f64,
    /// −E_Q[V]: mean loss of the final pushforward.
    pub final_risk: f64,
    pub field_evals: u64,
    pub warnings: Vec<String>,
}

impl TrainReport {
    /// CSV rows block,epoch,objective,transport_cost,w2_estimate,risk; the
    /// block-level columns carry that block's end-of-block measurements.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("block,epoch,objective,transport_cost,w2_estimate,risk\n");
        for e in &self.epochs {
            let b = self.blocks.iter().find(|b| b.block == e.block);
            let (tc, w2, risk) = match b {
                Some(b) => (b.transport_cost, b.w2_estimate, b.risk),
                None => (f64::NAN, f64::NAN, f64::NAN),
            };
            let _ = writeln!(
                out,
                "{},{},{:.16e},{:.16e},{:.16e},{:.16e}",
                e.block, e.epoch, e.objective, tc, w2, risk
            );
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Exact-where-possible W2 between equal-size uniform measures: sorted pairing
/// in 1-D, assignment otherwise.
fn w2_estimate(p: &EmpiricalMeasure, q: &EmpiricalMeasure) -> Result<f64> {
    if p.dim() == 1 && p.len() == q.len() && p.is_uniform() && q.is_uniform() {
        return w2_1d(p, q);
    }
    Ok(w2_assignment(p, q)?.0)
}

fn optimizer_step(block: &mut FlowBlock, opt: &OptimizerKind) -> Result<()> {
    match opt {
        OptimizerKind::Adam { lr } => {
            block.field.mlp.store.adam_step(&AdamConfig::with_lr(*lr))
        }
        OptimizerKind::Sgd { lr } => block.field.mlp.store.sgd_step(*lr),
    }
}

fn batch_of(measure: &EmpiricalMeasure, idx: &[usize]) -> Result<EmpiricalMeasure> {
    let rows: Vec<Vec<f64>> = idx.iter().map(|&i| measure.point(i).to_vec()).collect();
    let mut batch = EmpiricalMeasure::uniform_from_rows(&rows)?;
    if let Some(labels) = measure.labels() {
        batch = batch.with_labels(idx.iter().map(|&i| labels[i]).collect())?;
    }
    Ok(batch)
}

/// Block-wise progressive training: returns the trained chain and its report.
pub fn train_lfd(
    v: &Potential,
    p: &EmpiricalMeasure,
    cfg: &LfdTrainConfig,
) -> Result<(FlowChain, TrainReport)> {
    cfg.validate()?;
    if v.requires_labels() && p.labels().is_none() {
        return Err(Error::invalid("potential requires labels but measure has none"));
    }
    if cfg.batch_size.is_some() && !p.is_uniform() {
        return Err(Error::Unsupported(
            "mini-batch training requires a uniform source measure".into(),
        ));
    }
    let gammas = cfg.gammas.materialize(cfg.blocks)?;
    let d = p.dim();
    let mut chain = FlowChain::identity();
    let mut current = p.clone();
    let mut report = TrainReport {
        epochs: Vec::new(),
        blocks: Vec::new(),
        achieved_w2: 0.0,
        final_risk: 0.0,
        field_evals: 0,
        warnings: Vec::new(),
    };
    let mut shuffler = rng::substream(cfg.seed, "lfd-shuffle");

    for (k, &gamma) in gammas.iter().enumerate() {
        let mut init_rng = rng::substream(cfg.seed, &format!("lfd-block-{k}"));
        let field = crate::flow::VelocityField::new(
            d,
            &cfg.hidden,
            cfg.activation,
            cfg.time_conditioning(),
            &mut init_rng,
        )?;
        let mut block = FlowBlock::new(field, cfg.integrator, gamma)?;

        let initial_obj = block_objective(&block, v, &current)?;
        let guard = DIVERGENCE_FACTOR * initial_obj.abs().max(1.0);
        for epoch in 0..cfg.epochs_per_block {
            // Record the objective before this epoch's updates: with full
            // batches the sequence is the plain descent curve.
            let epoch_obj = block_objective(&block, v, &current)?;
            report.epochs.push(EpochRecord { block: k, epoch, objective: epoch_obj });

            let order = rng::permutation(&mut shuffler, current.len());
            let bs = cfg.batch_size.unwrap_or(current.len()).max(1);
            for chunk in order.chunks(bs) {
                let batch = batch_of(&current, chunk)?;
                block.field.mlp.store.zero_grads();
                let obj = block_objective_grad(&mut block, v, &batch)?;
                if !obj.is_finite() || obj > guard {
                    return Err(Error::Diverged(format!(
                        "block {k} epoch {epoch}: objective {obj:.3e} (initial {initial_obj:.3e})"
                    )));
                }
                optimizer_step(&mut block, &cfg.optimizer)?;
            }
        }

        let mapped = chain_block_pushforward(&block, &current)?;
        let transport_cost = (0..current.len())
            .map(|i| {
                current.weights()[i]
                    * crate::measures::squared_dist(current.point(i), mapped.point(i))
            })
            .sum();
        let w2_block = w2_estimate(&current, &mapped)?;
        let risk = -mapped
            .weights()
            .iter()
            .zip(v.value_batch(mapped.points(), mapped.labels())?)
            .map(|(w, val)| w * val)
            .sum::<f64>();
        report.blocks.push(BlockRecord {
            block: k,
            gamma,
            transport_cost,
            w2_estimate: w2_block,
            risk,
        });
        chain.push(block)?;
        current = mapped;

        if let Some(target) = cfg.stop_radius {
            let radius = w2_estimate(p, &current)?;
            if radius >= target && k + 1 < gammas.len() {
                report
                    .warnings
                    .push(format!("stopped after block {k}: radius {radius:.4} ≥ {target}"));
                break;
            }
        }
    }

    report.achieved_w2 = w2_estimate(p, &current)?;
    report.final_risk = -current
        .weights()
        .iter()
        .zip(v.value_batch(current.points(), current.labels())?)
        .map(|(w, val)| w * val)
        .sum::<f64>();
    report.field_evals = chain.eval_count();
    Ok((chain, report))
}

fn chain_block_pushforward(
    block: &FlowBlock,
    p: &EmpiricalMeasure,
) -> Result<EmpiricalMeasure> {
    let mapped = block.integrate_batch(p.points())?;
    p.with_points(mapped)
}

/// One chain per class label (features of each class move independently).
pub fn train_lfd_per_class(
    v_for_class: impl Fn(usize) -> Potential,
    p: &EmpiricalMeasure,
    cfg: &LfdTrainConfig,
) -> Result<Vec<(usize, FlowChain, TrainReport)>> {
    let mut out = Vec::new();
    for (label, class_measure) in p.split_by_label()? {
        let v = v_for_class(label);
        let mut class_cfg = cfg.clone();
        class_cfg.seed = cfg.seed.wrapping_add(label as u64);
        let (chain, report) = train_lfd(&v, &class_measure, &class_cfg)?;
        out.push((label, chain, report));
    }
    Ok(out)
}

// ── min-max solver ───────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MinMaxConfig {
    pub gamma: f64,
    pub outer_iters: usize,
    pub inner_loops: usize,
    pub classifier_lr: f64,
    pub flow_lr: f64,
    /// None = full batch for both players.
    pub batch_size: Option<usize>,
    pub seed: u64,
}

impl MinMaxConfig {
    /// γ = 5 and N_inner = 3 are the stock settings.
    pub fn defaults(outer_iters: usize, seed: u64) -> Self {
        MinMaxConfig {
            gamma: 5.0,
            outer_iters,
            inner_loops: 3,
            classifier_lr: 1e-3,
            flow_lr: 1e-3,
            batch_size: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.outer_iters == 0 {
            return Err(Error::invalid("min-max needs N ≥ 1 outer iterations"));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::invalid("min-max gamma must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MinMaxIterRecord {
    pub iter: usize,
    /// Proximal objective of the last inner flow step.
    pub flow_objective: f64,
    /// Classifier risk on the current pushforward after its update.
    pub risk_on_pushforward: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MinMaxReport {
    pub iters: Vec<MinMaxIterRecord>,
    pub final_clean_risk: f64,
    pub final_clean_accuracy: f64,
}

/// Alternating solver: `inner_loops` proximal flow steps, then one risk step
/// for the classifier on Q = T_#P. The flow warm-starts across outer
/// iterations (a single persistent block).
pub fn solve_minmax(
    classifier: &mut MLPClassifier,
    flow: &mut FlowBlock,
    p: &EmpiricalMeasure,
    cfg: &MinMaxConfig,
) -> Result<MinMaxReport> {
    cfg.validate()?;
    if p.labels().is_none() {
        return Err(Error::invalid("solve_minmax requires labeled data"));
    }
    if flow.dim() != p.dim() || classifier.input_dim() != p.dim() {
        return Err(Error::shape("min-max: dimension mismatch"));
    }
    flow.gamma = cfg.gamma;
    let mut shuffler = rng::substream(cfg.seed, "minmax-shuffle");
    let clf_adam = AdamConfig::with_lr(cfg.classifier_lr);
    let flow_adam = AdamConfig::with_lr(cfg.flow_lr);
    let mut report = MinMaxReport {
        iters: Vec::new(),
        final_clean_risk: 0.0,
        final_clean_accuracy: 0.0,
    };

    for iter in 0..cfg.outer_iters {
        let bs = cfg.batch_size.unwrap_or(p.len()).max(1);
        let order = rng::permutation(&mut shuffler, p.len());
        let batch = batch_of(p, &order[..bs.min(p.len())])?;

        // Flow steps against the frozen current classifier.
        let mut flow_obj = f64::NAN;
        for _ in 0..cfg.inner_loops {
            let v = Potential::negated_loss(RiskModel::CrossEntropy(classifier.clone()));
            flow.field.mlp.store.zero_grads();
            flow_obj = block_objective_grad(flow, &v, &batch)?;
            if !flow_obj.is_finite() {
                return Err(Error::Diverged(format!("min-max iteration {iter}: flow objective NaN")));
            }
            flow.field.mlp.store.adam_step(&flow_adam)?;
        }

        // One classifier step on the pushforward.
        let q_points = flow.integrate_batch(batch.points())?;
        let q = batch.with_points(q_points)?;
        let mut tape = crate::autodiff::Tape::new();
        let handle = tape.bind_store();
        let nodes = classifier.mlp.register_params(&mut tape, handle)?;
        let xn = tape.constant(q.points().clone())?;
        let logits = classifier.mlp.forward_with(&mut tape, &nodes, xn)?;
        let ce = tape.softmax_cross_entropy(logits, q.labels().unwrap())?;
        let obj = tape.mean(ce)?;
        let risk_on_q = tape.value(obj).scalar_value()?;
        if !risk_on_q.is_finite() {
            return Err(Error::Diverged(format!("min-max iteration {iter}: classifier risk NaN")));
        }
        tape.backward_scalar(obj)?;
        tape.accumulate_param_grads(handle, &mut classifier.mlp.store)?;
        classifier.mlp.store.adam_step(&clf_adam)?;

        report.iters.push(MinMaxIterRecord {
            iter,
            flow_objective: flow_obj,
            risk_on_pushforward: risk_on_q,
        });
    }

    let model = RiskModel::CrossEntropy(classifier.clone());
    report.final_clean_risk = risk_eval(&model, p)?;
    report.final_clean_accuracy = accuracy_eval(classifier, p)?;
    Ok(report)
}

// ── evaluation and sampling ──────────────────────────────────────────

#[derive(Debug, Clone, Serialize)]
pub struct LfdEvalReport {
    pub risk: f64,
    pub accuracy: Option<f64>,
    /// W2(Q, P) assignment estimate.
    pub w2_budget: f64,
    pub warnings: Vec<String>,
}

/// Bundle risk, accuracy, and budget for a candidate LFD Q around P.
pub fn evaluate_lfd(
    model: &RiskModel,
    p: &EmpiricalMeasure,
    q: &EmpiricalMeasure,
) -> Result<LfdEvalReport> {
    let mut warnings = Vec::new();
    let (pe, qe) = if p.len() != q.len() {
        let m = p.len().min(q.len());
        warnings.push(format!("evaluate_lfd: resampling to {m} points for the W2 estimate"));
        let mut r = rng::substream(0xe7a1, "evaluate-resample");
        (p.subsample(m, &mut r)?, q.subsample(m, &mut r)?)
    } else {
        (p.clone(), q.clone())
    };
    let w2_budget = w2_estimate(&pe, &qe)?;
    let risk = risk_eval(model, q)?;
    let accuracy = match model {
        RiskModel::CrossEntropy(clf) => Some(accuracy_eval(clf, q)?),
        _ => None,
    };
    Ok(LfdEvalReport { risk, accuracy, w2_budget, warnings })
}

/// Something that draws d-dimensional points.
pub trait PointSampler {
    fn dim(&self) -> usize;
    fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<EmpiricalMeasure>;
}

impl PointSampler for crate::measures::DiagGaussian {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<EmpiricalMeasure> {
        Ok(crate::measures::DiagGaussian::sample(self, n, rng))
    }
}

/// Draws from the base sampler, then applies the trained chain: a sampler for
/// the pushforward distribution.
pub struct ComposedSampler<'a> {
    base: &'a dyn PointSampler,
    chain: &'a FlowChain,
}

pub fn compose_sampler<'a>(
    base: &'a dyn PointSampler,
    chain: &'a FlowChain,
) -> Result<ComposedSampler<'a>> {
    if let Some(d) = chain.dim() {
        if d != base.dim() {
            return Err(Error::shape(format!(
                "sampler dimension {} vs chain dimension {d}",
                base.dim()
            )));
        }
    }
    Ok(ComposedSampler { base, chain })
}

impl PointSampler for ComposedSampler<'_> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<EmpiricalMeasure> {
        let drawn = self.base.sample(n, rng)?;
        self.chain.push_forward(&drawn)
    }
}
