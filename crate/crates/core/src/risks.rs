//! Decision functions, losses, and the potentials V = −r driving transport.
//!
//! A [`Potential`] exposes the negated loss three ways: pointwise values,
//! pointwise gradients (analytic where a closed form exists, tape-backed
//! otherwise), and as a per-point node on a live tape so flow training can
//! backpropagate through it. Labels are carried by the measure and ride along
//! under transport; only features move.

use crate::autodiff::{DenseArray, NodeId, Tape};
use crate::error::{Error, Result};
use crate::measures::EmpiricalMeasure;
use crate::nn::{Activation, Mlp};
use crate::par;
use crate::rng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

// ── classifiers and detectors ────────────────────────────────────────

/// Softmax classifier over C classes.
#[derive(Debug, Clone)]
pub struct MLPClassifier {
    pub mlp: Mlp,
    pub classes: usize,
}

impl MLPClassifier {
    pub fn new(
        input_dim: usize,
        hidden: &[usize],
        classes: usize,
        activation: Activation,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if classes < 2 {
            return Err(Error::invalid("classifier needs ≥ 2 classes"));
        }
        let mut widths = vec![input_dim];
        widths.extend_from_slice(hidden);
        widths.push(classes);
        Ok(MLPClassifier { mlp: Mlp::new(&widths, activation, true, rng)?, classes })
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.input_dim()
    }

    pub fn logits(&self, x: &DenseArray) -> Result<DenseArray> {
        self.mlp.forward(x)
    }

    /// Row-wise softmax probabilities.
    pub fn probabilities(&self, x: &DenseArray) -> Result<DenseArray> {
        let logits = self.logits(x)?;
        let (n, c) = (logits.rows(), logits.cols());
        let mut out = vec![0.0; n * c];
        for i in 0..n {
            let row = logits.row(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for j in 0..c {
                out[i * c + j] = (row[j] - m).exp();
                s += out[i * c + j];
            }
            for j in 0..c {
                out[i * c + j] /= s;
            }
        }
        DenseArray::matrix(n, c, out)
    }

    pub fn predict(&self, x: &DenseArray) -> Result<Vec<usize>> {
        let logits = self.logits(x)?;
        Ok((0..logits.rows())
            .map(|i| {
                let row = logits.row(i);
                let mut best = 0;
                for j in 1..row.len() {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect())
    }

    /// Per-point cross-entropy −log softmax(φ(x))_y.
    pub fn cross_entropy(&self, x: &DenseArray, labels: &[usize]) -> Result<Vec<f64>> {
        let logits = self.logits(x)?;
        if labels.len() != logits.rows() {
            return Err(Error::shape("labels/rows mismatch"));
        }
        Ok((0..logits.rows())
            .map(|i| {
                let row = logits.row(i);
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                lse - row[labels[i]]
            })
            .collect())
    }
}

/// Scalar-valued detector for two-sample testing.
#[derive(Debug, Clone)]
pub struct ScalarDetector {
    pub mlp: Mlp,
}

impl ScalarDetector {
    pub fn new(
        input_dim: usize,
        hidden: &[usize],
        activation: Activation,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let mut widths = vec![input_dim];
        widths.extend_from_slice(hidden);
        widths.push(1);
        Ok(ScalarDetector { mlp: Mlp::new(&widths, activation, true, rng)? })
    }

    pub fn values(&self, x: &DenseArray) -> Result<Vec<f64>> {
        Ok(self.mlp.forward(x)?.data().to_vec())
    }
}

// ── generating functions ─────────────────────────────────────────────

/// Nonnegative, non-decreasing, convex surrogate for 0/1 error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratingFunction {
    /// f(t) = eᵗ
    Exp,
    /// f(t) = ln(1 + eᵗ)
    Logistic,
    /// f(t) = (t + 1)²₊
    QuadHinge,
}

impl GeneratingFunction {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            GeneratingFunction::Exp => t.exp(),
            GeneratingFunction::Logistic => {
                if t > 0.0 {
                    t + (-t).exp().ln_1p()
                } else {
                    t.exp().ln_1p()
                }
            }
            GeneratingFunction::QuadHinge => {
                let h = (t + 1.0).max(0.0);
                h * h
            }
        }
    }

    pub fn grad(&self, t: f64) -> f64 {
        match self {
            GeneratingFunction::Exp => t.exp(),
            GeneratingFunction::Logistic => {
                if t >= 0.0 {
                    1.0 / (1.0 + (-t).exp())
                } else {
                    let e = t.exp();
                    e / (1.0 + e)
                }
            }
            GeneratingFunction::QuadHinge => 2.0 * (t + 1.0).max(0.0),
        }
    }

    /// Tape evaluation, where the primitive set allows it.
    pub fn eval_on_tape(&self, tape: &mut Tape, t: NodeId) -> Result<NodeId> {
        match self {
            GeneratingFunction::Logistic => tape.softplus(t, 1.0),
            GeneratingFunction::QuadHinge => {
                let shifted = tape.add_const(t, 1.0)?;
                let h = tape.relu(shifted)?;
                tape.mul(h, h)
            }
            GeneratingFunction::Exp => Err(Error::Unsupported(
                "Exp generating function has no tape primitive; use Logistic or QuadHinge for training".into(),
            )),
        }
    }
}

/// Which expectation of the two-sample risk a sample contributes to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HypoSide {
    /// Contributes f∘(−φ).
    Null,
    /// Contributes f∘φ.
    Alternative,
}

// ── risk models and potentials ───────────────────────────────────────

/// Decision function plus scalar loss r(x; φ).
#[derive(Debug, Clone)]
pub enum RiskModel {
    /// r(x, y) = −log softmax(φ(x))_y
    CrossEntropy(MLPClassifier),
    /// r(x) = f(−φ(x)) or f(φ(x)) depending on side.
    Hypothesis { detector: ScalarDetector, f: GeneratingFunction, side: HypoSide },
}

impl RiskModel {
    pub fn requires_labels(&self) -> bool {
        matches!(self, RiskModel::CrossEntropy(_))
    }

    pub fn input_dim(&self) -> usize {
        match self {
            RiskModel::CrossEntropy(c) => c.input_dim(),
            RiskModel::Hypothesis { detector, .. } => detector.mlp.input_dim(),
        }
    }

    /// Per-point losses over a batch.
    pub fn losses(&self, points: &DenseArray, labels: Option<&[usize]>) -> Result<Vec<f64>> {
        match self {
            RiskModel::CrossEntropy(clf) => {
                let labels = labels.ok_or_else(|| {
                    Error::invalid("cross-entropy risk requires labels")
                })?;
                clf.cross_entropy(points, labels)
            }
            RiskModel::Hypothesis { detector, f, side } => {
                let phi = detector.values(points)?;
                Ok(phi
                    .iter()
                    .map(|&v| match side {
                        HypoSide::Null => f.eval(-v),
                        HypoSide::Alternative => f.eval(v),
                    })
                    .collect())
            }
        }
    }

    /// Loss and input gradient at one point (tape-backed).
    pub fn loss_grad_point(&self, x: &[f64], label: Option<usize>) -> Result<(f64, Vec<f64>)> {
        let mut tape = Tape::new();
        let xn = tape.input(DenseArray::matrix(1, x.len(), x.to_vec())?)?;
        let loss = self.loss_on_tape(&mut tape, xn, label.map(|l| vec![l]).as_deref())?;
        let obj = tape.sum(loss)?;
        let value = tape.value(obj).scalar_value()?;
        tape.backward_scalar(obj)?;
        let grad = tape.adjoint(xn)?.data().to_vec();
        Ok((value, grad))
    }

    /// Per-point loss vector on a live tape (frozen model parameters).
    pub fn loss_on_tape(
        &self,
        tape: &mut Tape,
        x: NodeId,
        labels: Option<&[usize]>,
    ) -> Result<NodeId> {
        match self {
            RiskModel::CrossEntropy(clf) => {
                let labels =
                    labels.ok_or_else(|| Error::invalid("cross-entropy risk requires labels"))?;
                let logits = clf.mlp.forward_frozen(tape, x)?;
                tape.softmax_cross_entropy(logits, labels)
            }
            RiskModel::Hypothesis { detector, f, side } => {
                let n = tape.value(x).rows();
                let phi2 = detector.mlp.forward_frozen(tape, x)?;
                let phi = tape.reshape(phi2, vec![n])?;
                let arg = match side {
                    HypoSide::Null => tape.scale(phi, -1.0)?,
                    HypoSide::Alternative => phi,
                };
                f.eval_on_tape(tape, arg)
            }
        }
    }
}

/// Potential V(x) = −r(x; φ), with closed-form kinds for the oracles.
#[derive(Debug, Clone)]
pub enum PotentialKind {
    /// V(x) = (a/2)‖x − c‖²
    Quadratic { center: Vec<f64>, scale: f64 },
    /// V(x) = a·x
    Linear { slope: Vec<f64> },
    /// V(x) = −r(x; φ)
    NegatedLoss(RiskModel),
}

#[derive(Debug, Clone)]
pub struct Potential {
    pub kind: PotentialKind,
    /// Optional smoothness bound L on ∇V (estimated for NegatedLoss).
    pub smoothness: Option<f64>,
}

impl Potential {
    pub fn quadratic(center: Vec<f64>, scale: f64) -> Self {
        // ∇V is exactly scale-Lipschitz.
        Potential {
            kind: PotentialKind::Quadratic { center, scale },
            smoothness: Some(scale.abs()),
        }
    }

    /// The canonical test potential ½‖x‖².
    pub fn half_squared_norm(dim: usize) -> Self {
        Self::quadratic(vec![0.0; dim], 1.0)
    }

    pub fn linear(slope: Vec<f64>) -> Self {
        Potential { kind: PotentialKind::Linear { slope }, smoothness: Some(0.0) }
    }

    pub fn negated_loss(model: RiskModel) -> Self {
        Potential { kind: PotentialKind::NegatedLoss(model), smoothness: None }
    }

    pub fn requires_labels(&self) -> bool {
        match &self.kind {
            PotentialKind::NegatedLoss(m) => m.requires_labels(),
            _ => false,
        }
    }

    pub fn dim_hint(&self) -> Option<usize> {
        match &self.kind {
            PotentialKind::Quadratic { center, .. } => Some(center.len()),
            PotentialKind::Linear { slope } => Some(slope.len()),
            PotentialKind::NegatedLoss(m) => Some(m.input_dim()),
        }
    }

    pub fn value_point(&self, x: &[f64], label: Option<usize>) -> Result<f64> {
        Ok(self.value_batch(&DenseArray::matrix(1, x.len(), x.to_vec())?, label.map(|l| vec![l]).as_deref())?[0])
    }

    /// Per-point values over a batch.
    pub fn value_batch(&self, points: &DenseArray, labels: Option<&[usize]>) -> Result<Vec<f64>> {
        match &self.kind {
            PotentialKind::Quadratic { center, scale } => Ok((0..points.rows())
                .map(|i| 0.5 * scale * crate::measures::squared_dist(points.row(i), center))
                .collect()),
            PotentialKind::Linear { slope } => Ok((0..points.rows())
                .map(|i| points.row(i).iter().zip(slope).map(|(a, b)| a * b).sum())
                .collect()),
            PotentialKind::NegatedLoss(model) => {
                Ok(model.losses(points, labels)?.into_iter().map(|r| -r).collect())
            }
        }
    }

    /// ∇V at one point: analytic for Quadratic/Linear, tape otherwise.
    pub fn grad_point(&self, x: &[f64], label: Option<usize>) -> Result<Vec<f64>> {
        match &self.kind {
            PotentialKind::Quadratic { center, scale } => {
                Ok(x.iter().zip(center).map(|(a, c)| scale * (a - c)).collect())
            }
            PotentialKind::Linear { slope } => Ok(slope.clone()),
            PotentialKind::NegatedLoss(model) => {
                let (_, g) = model.loss_grad_point(x, label)?;
                Ok(g.into_iter().map(|v| -v).collect())
            }
        }
    }

    /// Per-point V values on a live tape, [n] node.
    pub fn eval_on_tape(
        &self,
        tape: &mut Tape,
        z: NodeId,
        labels: Option<&[usize]>,
    ) -> Result<NodeId> {
        match &self.kind {
            PotentialKind::Quadratic { center, scale } => {
                let n = tape.value(z).rows();
                let d = tape.value(z).cols();
                if center.len() != d {
                    return Err(Error::shape("potential center dimension mismatch"));
                }
                let tiled: Vec<f64> =
                    (0..n).flat_map(|_| center.iter().copied()).collect();
                let c = tape.constant(DenseArray::matrix(n, d, tiled)?)?;
                let diff = tape.sub(z, c)?;
                let sq = tape.row_squared_norm(diff)?;
                tape.scale(sq, 0.5 * scale)
            }
            PotentialKind::Linear { slope } => {
                let n = tape.value(z).rows();
                let w = tape.constant(DenseArray::matrix(1, slope.len(), slope.clone())?)?;
                let b = tape.constant(DenseArray::vector(vec![0.0]))?;
                let y = tape.affine(z, w, b)?;
                tape.reshape(y, vec![n])
            }
            PotentialKind::NegatedLoss(model) => {
                let r = model.loss_on_tape(tape, z, labels)?;
                tape.scale(r, -1.0)
            }
        }
    }

    /// Empirical smoothness estimate: max finite-difference gradient ratio
    /// over random pairs near the data region.
    pub fn estimate_smoothness(
        &self,
        region: &EmpiricalMeasure,
        pairs: usize,
        seed: u64,
    ) -> Result<f64> {
        let mut rng = rng::substream(seed, "smoothness-probe");
        let d = region.dim();
        let mut best = 0.0_f64;
        for _ in 0..pairs {
            let i = rng.gen_range(0..region.len());
            let mut x = region.point(i).to_vec();
            let mut y = region.point(rng.gen_range(0..region.len())).to_vec();
            for j in 0..d {
                x[j] += 0.3 * rng::normal(&mut rng);
                y[j] += 0.3 * rng::normal(&mut rng);
            }
            let label = region.labels().map(|ls| ls[i]);
            let gx = self.grad_point(&x, label)?;
            let gy = self.grad_point(&y, label)?;
            let num: f64 = gx
                .iter()
                .zip(&gy)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let den = crate::measures::squared_dist(&x, &y).sqrt();
            if den > 1e-9 {
                best = best.max(num / den);
            }
        }
        Ok(best)
    }

    /// Attach an estimated smoothness bound.
    pub fn with_estimated_smoothness(
        mut self,
        region: &EmpiricalMeasure,
        seed: u64,
    ) -> Result<Self> {
        if self.smoothness.is_none() {
            self.smoothness = Some(self.estimate_smoothness(region, 1000, seed)?);
        }
        Ok(self)
    }
}

// ── evaluation ───────────────────────────────────────────────────────

/// Weighted mean loss R(Q; φ) = E_{x∼Q} r(x; φ).
pub fn risk_eval(model: &RiskModel, q: &EmpiricalMeasure) -> Result<f64> {
    let losses = model.losses(q.points(), q.labels())?;
    Ok(q.weights().iter().zip(&losses).map(|(w, l)| w * l).sum())
}

/// Percentage of points whose argmax prediction equals the label.
pub fn accuracy_eval(model: &MLPClassifier, q: &EmpiricalMeasure) -> Result<f64> {
    let labels = q
        .labels()
        .ok_or_else(|| Error::invalid("accuracy_eval requires labels"))?;
    let preds = model.predict(q.points())?;
    if q.is_uniform() {
        let hits = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
        return Ok(100.0 * hits as f64 / q.len() as f64);
    }
    let hit: f64 = q
        .weights()
        .iter()
        .zip(preds.iter().zip(labels))
        .map(|(w, (p, y))| if p == y { *w } else { 0.0 })
        .sum();
    Ok(100.0 * hit)
}

/// Two-sample testing risk E_{Q0}[f∘(−φ)] + E_{Q1}[f∘φ].
pub fn hypothesis_risk(
    detector: &ScalarDetector,
    q0: &EmpiricalMeasure,
    q1: &EmpiricalMeasure,
    f: GeneratingFunction,
) -> Result<f64> {
    if q0.dim() != q1.dim() {
        return Err(Error::shape("hypothesis_risk: dimension mismatch"));
    }
    let v0 = detector.values(q0.points())?;
    let v1 = detector.values(q1.points())?;
    let t0: f64 = q0.weights().iter().zip(&v0).map(|(w, &p)| w * f.eval(-p)).sum();
    let t1: f64 = q1.weights().iter().zip(&v1).map(|(w, &p)| w * f.eval(p)).sum();
    Ok(t0 + t1)
}

// ── PGD attack ───────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackNorm {
    L2,
    Linf,
}

#[derive(Debug, Clone, Copy)]
pub struct PgdConfig {
    pub epsilon: f64,
    pub norm: AttackNorm,
    pub steps: usize,
    /// Defaults to 2.5·ε/steps when None.
    pub step_size: Option<f64>,
}

impl PgdConfig {
    pub fn l2(epsilon: f64) -> Self {
        PgdConfig { epsilon, norm: AttackNorm::L2, steps: 40, step_size: None }
    }

    pub fn linf(epsilon: f64) -> Self {
        PgdConfig { epsilon, norm: AttackNorm::Linf, steps: 40, step_size: None }
    }

    fn step(&self) -> f64 {
        self.step_size.unwrap_or(2.5 * self.epsilon / self.steps.max(1) as f64)
    }
}

/// Projected gradient ascent on r(x + δ; φ) over ‖δ‖ ≤ ε. Projection is
/// enforced after every step and the best-seen iterate (including δ = 0) is
/// returned, so the achieved loss never falls below the clean loss.
pub fn pgd_attack(
    model: &RiskModel,
    x: &[f64],
    label: Option<usize>,
    cfg: &PgdConfig,
) -> Result<Vec<f64>> {
    if cfg.epsilon < 0.0 {
        return Err(Error::invalid("pgd: epsilon must be ≥ 0"));
    }
    if cfg.epsilon == 0.0 {
        return Ok(x.to_vec());
    }
    let d = x.len();
    let step = cfg.step();
    let mut delta = vec![0.0; d];
    let (mut best_loss, _) = model.loss_grad_point(x, label)?;
    let mut best_delta = delta.clone();
    for _ in 0..cfg.steps {
        let xp: Vec<f64> = x.iter().zip(&delta).map(|(a, b)| a + b).collect();
        let (_, grad) = model.loss_grad_point(&xp, label)?;
        match cfg.norm {
            AttackNorm::L2 => {
                let norm: f64 = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > 1e-300 {
                    for (dl, g) in delta.iter_mut().zip(&grad) {
                        *dl += step * g / norm;
                    }
                }
                project_l2(&mut delta, cfg.epsilon);
            }
            AttackNorm::Linf => {
                for (dl, g) in delta.iter_mut().zip(&grad) {
                    *dl += step * g.signum() * if *g == 0.0 { 0.0 } else { 1.0 };
                    *dl = dl.clamp(-cfg.epsilon, cfg.epsilon);
                }
            }
        }
        let xn: Vec<f64> = x.iter().zip(&delta).map(|(a, b)| a + b).collect();
        let (loss, _) = model.loss_grad_point(&xn, label)?;
        if loss > best_loss {
            best_loss = loss;
            best_delta = delta.clone();
        }
    }
    Ok(x.iter().zip(&best_delta).map(|(a, b)| a + b).collect())
}

fn project_l2(delta: &mut [f64], eps: f64) {
    let norm: f64 = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > eps {
        let s = eps / norm;
        for v in delta.iter_mut() {
            *v *= s;
        }
    }
}

/// Attack every point of a measure (features move, labels stay).
pub fn pgd_attack_measure(
    model: &RiskModel,
    q: &EmpiricalMeasure,
    cfg: &PgdConfig,
) -> Result<EmpiricalMeasure> {
    let rows: Vec<Result<Vec<f64>>> = par::map_range(q.len(), |i| {
        pgd_attack(model, q.point(i), q.labels().map(|ls| ls[i]), cfg)
    });
    let mut data = Vec::with_capacity(q.len() * q.dim());
    for r in rows {
        data.extend(r?);
    }
    q.with_points(DenseArray::new(vec![q.len(), q.dim()], data)?)
}

// ── classifier training ──────────────────────────────────────────────

/// Fit a detector by minimizing the two-sample risk
/// E_{P0}[f∘(−φ)] + E_{P1}[f∘φ] with Adam (f must have a tape form).
pub fn train_detector(
    detector: &mut ScalarDetector,
    p0: &EmpiricalMeasure,
    p1: &EmpiricalMeasure,
    f: GeneratingFunction,
    epochs: usize,
    lr: f64,
) -> Result<Vec<f64>> {
    if p0.dim() != p1.dim() {
        return Err(Error::shape("train_detector: dimension mismatch"));
    }
    let adam = crate::autodiff::AdamConfig::with_lr(lr);
    let mut curve = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let mut tape = Tape::new();
        let handle = tape.bind_store();
        let nodes = detector.mlp.register_params(&mut tape, handle)?;

        let mut side_term = |tape: &mut Tape,
                             m: &EmpiricalMeasure,
                             sign: f64,
                             nodes: &crate::nn::MlpNodes|
         -> Result<NodeId> {
            let x = tape.constant(m.points().clone())?;
            let phi2 = detector.mlp.forward_with(tape, nodes, x)?;
            let phi = tape.reshape(phi2, vec![m.len()])?;
            let arg = tape.scale(phi, sign)?;
            let vals = f.eval_on_tape(tape, arg)?;
            let w = tape.constant(DenseArray::vector(m.weights().to_vec()))?;
            let weighted = tape.mul(vals, w)?;
            tape.sum(weighted)
        };
        let t0 = side_term(&mut tape, p0, -1.0, &nodes)?;
        let t1 = side_term(&mut tape, p1, 1.0, &nodes)?;
        let obj = tape.add(t0, t1)?;
        curve.push(tape.value(obj).scalar_value()?);
        tape.backward_scalar(obj)?;
        tape.accumulate_param_grads(handle, &mut detector.mlp.store)?;
        detector.mlp.store.adam_step(&adam)?;
    }
    Ok(curve)
}

#[derive(Debug, Clone)]
pub struct ClassifierTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// None = full batch.
    pub batch_size: Option<usize>,
    pub seed: u64,
}

impl ClassifierTrainConfig {
    pub fn full_batch(epochs: usize, lr: f64, seed: u64) -> Self {
        ClassifierTrainConfig { epochs, lr, batch_size: None, seed }
    }
}

#[derive(Debug, Clone)]
pub struct TrainCurve {
    /// Full-data cross-entropy after each epoch.
    pub losses: Vec<f64>,
    pub warnings: Vec<String>,
}

/// ERM under cross-entropy with Adam. Deterministic for a fixed seed.
pub fn train_classifier(
    model: &mut MLPClassifier,
    data: &EmpiricalMeasure,
    cfg: &ClassifierTrainConfig,
) -> Result<TrainCurve> {
    let labels = data
        .labels()
        .ok_or_else(|| Error::invalid("train_classifier requires labels"))?
        .to_vec();
    let mut warnings = Vec::new();
    {
        let mut distinct = labels.clone();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() < 2 {
            warnings.push("training data contains a single class".to_string());
        }
        if let Some(&max) = distinct.iter().max() {
            if max >= model.classes {
                return Err(Error::invalid(format!(
                    "label {max} out of range for {} classes",
                    model.classes
                )));
            }
        }
    }
    let adam = crate::autodiff::AdamConfig::with_lr(cfg.lr);
    let mut shuffler = rng::substream(cfg.seed, "classifier-shuffle");
    let n = data.len();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let order = rng::permutation(&mut shuffler, n);
        let bs = cfg.batch_size.unwrap_or(n).max(1);
        for chunk in order.chunks(bs) {
            let rows: Vec<Vec<f64>> = chunk.iter().map(|&i| data.point(i).to_vec()).collect();
            let ls: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let ws: Vec<f64> = chunk.iter().map(|&i| data.weights()[i]).collect();
            let wsum: f64 = ws.iter().sum();

            let mut tape = Tape::new();
            let handle = tape.bind_store();
            let nodes = model.mlp.register_params(&mut tape, handle)?;
            let xn = tape.input(DenseArray::from_rows(&rows)?)?;
            let logits = model.mlp.forward_with(&mut tape, &nodes, xn)?;
            let ce = tape.softmax_cross_entropy(logits, &ls)?;
            // Weighted mean over the batch (weights renormalized per batch).
            let wnode = tape.constant(DenseArray::vector(
                ws.iter().map(|w| w / wsum).collect(),
            ))?;
            let weighted = tape.mul(ce, wnode)?;
            let obj = tape.sum(weighted)?;
            tape.backward_scalar(obj)?;
            tape.accumulate_param_grads(handle, &mut model.mlp.store)?;
            model.mlp.store.adam_step(&adam)?;
        }
        let ce = model.cross_entropy(data.points(), &labels)?;
        let full: f64 = data.weights().iter().zip(&ce).map(|(w, l)| w * l).sum();
        if !full.is_finite() {
            return Err(Error::Diverged("classifier loss went non-finite".into()));
        }
        losses.push(full);
    }
    Ok(TrainCurve { losses, warnings })
}
