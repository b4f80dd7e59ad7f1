//! Empirical measures and exact small-scale optimal transport.
//!
//! `w2_assignment` is the workhorse oracle: for uniform equal-size clouds the
//! optimal coupling is a permutation, found exactly by the Hungarian solver on
//! the squared-distance matrix. One-dimensional inputs additionally get the
//! sorted/quantile coupling (`w2_1d`), and diagonal Gaussians a closed form —
//! three independent routes to the same quantity, which is the point.

pub mod hungarian;

use crate::autodiff::DenseArray;
use crate::error::{Error, Result};
use crate::rng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

/// Hard cap for the assignment path; the dense O(n³) solve is meant for
/// verification scale.
pub const MAX_ASSIGNMENT_SIZE: usize = 4096;

/// Weighted point cloud. Weights sum to 1; labels are an optional side-array
/// that rides along under transport (features move, labels stay).
#[derive(Debug, Clone)]
pub struct EmpiricalMeasure {
    points: DenseArray,
    weights: Vec<f64>,
    labels: Option<Vec<usize>>,
}

impl EmpiricalMeasure {
    pub fn new(points: DenseArray, weights: Vec<f64>) -> Result<Self> {
        if points.shape().len() != 2 {
            return Err(Error::shape("points must be an n×d matrix"));
        }
        let n = points.rows();
        if n == 0 {
            return Err(Error::invalid("empirical measure needs at least one point"));
        }
        if weights.len() != n {
            return Err(Error::shape(format!("{} weights for {} points", weights.len(), n)));
        }
        if weights.iter().any(|&w| !w.is_finite() || w < 0.0) {
            return Err(Error::invalid("weights must be finite and nonnegative"));
        }
        // Kahan sum so the 1e-12 tolerance is meaningful for large n.
        let total = kahan_sum(&weights);
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("weights sum to {total}, expected 1 ± 1e-12")));
        }
        points.ensure_finite("EmpiricalMeasure points")?;
        Ok(EmpiricalMeasure { points, weights, labels: None })
    }

    /// Uniform weights over the given points.
    pub fn uniform(points: DenseArray) -> Result<Self> {
        let n = points.rows().max(1);
        let w = vec![1.0 / n as f64; n];
        Self::new(points, w)
    }

    pub fn uniform_from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::uniform(DenseArray::from_rows(rows)?)
    }

    /// 1-D convenience constructor.
    pub fn from_1d(values: &[f64]) -> Result<Self> {
        let rows: Vec<Vec<f64>> = values.iter().map(|&v| vec![v]).collect();
        Self::uniform_from_rows(&rows)
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::shape(format!(
                "{} labels for {} points",
                labels.len(),
                self.len()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        false // construction requires n ≥ 1
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    pub fn points(&self) -> &DenseArray {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        self.points.row(i)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn is_uniform(&self) -> bool {
        let w0 = 1.0 / self.len() as f64;
        self.weights.iter().all(|&w| (w - w0).abs() <= 1e-12)
    }

    /// Replace the support, keeping weights and labels.
    pub fn with_points(&self, points: DenseArray) -> Result<Self> {
        if points.rows() != self.len() || points.shape().len() != 2 {
            return Err(Error::shape("with_points: size mismatch"));
        }
        points.ensure_finite("with_points")?;
        Ok(EmpiricalMeasure {
            points,
            weights: self.weights.clone(),
            labels: self.labels.clone(),
        })
    }

    /// Weighted mean of an arbitrary per-point function.
    pub fn weighted_mean(&self, f: impl Fn(usize, &[f64]) -> f64) -> f64 {
        (0..self.len()).map(|i| self.weights[i] * f(i, self.point(i))).sum()
    }

    /// Seeded subsample of `m` distinct points, reweighted uniformly.
    pub fn subsample(&self, m: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if m == 0 || m > self.len() {
            return Err(Error::invalid(format!("subsample {m} of {}", self.len())));
        }
        let idx = rng::permutation(rng, self.len());
        let mut rows = Vec::with_capacity(m);
        let mut labels = self.labels.as_ref().map(|_| Vec::with_capacity(m));
        for &i in idx.iter().take(m) {
            rows.push(self.point(i).to_vec());
            if let (Some(ls), Some(src)) = (labels.as_mut(), self.labels.as_ref()) {
                ls.push(src[i]);
            }
        }
        let mut out = Self::uniform_from_rows(&rows)?;
        if let Some(ls) = labels {
            out = out.with_labels(ls)?;
        }
        Ok(out)
    }

    /// Split by label, preserving point order within each class.
    pub fn split_by_label(&self) -> Result<Vec<(usize, EmpiricalMeasure)>> {
        let labels = self
            .labels
            .as_ref()
            .ok_or_else(|| Error::invalid("split_by_label: measure has no labels"))?;
        let mut classes: Vec<usize> = labels.clone();
        classes.sort_unstable();
        classes.dedup();
        let mut out = Vec::new();
        for c in classes {
            let rows: Vec<Vec<f64>> = (0..self.len())
                .filter(|&i| labels[i] == c)
                .map(|i| self.point(i).to_vec())
                .collect();
            let m = EmpiricalMeasure::uniform_from_rows(&rows)?
                .with_labels(vec![c; rows.len()])?;
            out.push((c, m));
        }
        Ok(out)
    }

    // ── CSV interface: header dim0,…,dim{d-1},weight (weight optional) ──

    pub fn to_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let d = self.dim();
        let mut out = String::new();
        for j in 0..d {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&format!("dim{j}"));
        }
        out.push_str(",weight\n");
        for i in 0..self.len() {
            for (j, v) in self.point(i).iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                out.push_str(&format!("{v:.16e}"));
            }
            out.push_str(&format!(",{:.16e}\n", self.weights[i]));
        }
        out
    }

    pub fn from_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_csv_string(&text)
    }

    pub fn from_csv_string(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::invalid("csv: empty file"))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        let has_weight = cols.last() == Some(&"weight");
        let d = if has_weight { cols.len() - 1 } else { cols.len() };
        for (j, c) in cols.iter().take(d).enumerate() {
            if *c != format!("dim{j}") {
                return Err(Error::invalid(format!("csv: expected column dim{j}, got {c}")));
            }
        }
        let mut rows = Vec::new();
        let mut weights = Vec::new();
        for (ln, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != cols.len() {
                return Err(Error::invalid(format!("csv: row {} has {} fields", ln + 2, fields.len())));
            }
            let mut row = Vec::with_capacity(d);
            for f in fields.iter().take(d) {
                row.push(f.parse::<f64>().map_err(|e| Error::invalid(format!("csv: {e}")))?);
            }
            rows.push(row);
            if has_weight {
                weights.push(
                    fields[d].parse::<f64>().map_err(|e| Error::invalid(format!("csv: {e}")))?,
                );
            }
        }
        let points = DenseArray::from_rows(&rows)?;
        if has_weight {
            Self::new(points, weights)
        } else {
            Self::uniform(points)
        }
    }
}

/// Diagonal Gaussian, the closed-form oracle distribution.
#[derive(Debug, Clone)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::shape("mean/var length mismatch"));
        }
        if var.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::invalid("variances must be strictly positive"));
        }
        Ok(DiagGaussian { mean, var })
    }

    pub fn standard(d: usize) -> Self {
        DiagGaussian { mean: vec![0.0; d], var: vec![1.0; d] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> EmpiricalMeasure {
        let d = self.dim();
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            for j in 0..d {
                data.push(self.mean[j] + self.var[j].sqrt() * rng::normal(rng));
            }
        }
        EmpiricalMeasure::uniform(DenseArray::new(vec![n, d], data).expect("sized"))
            .expect("n ≥ 1 uniform")
    }
}

/// Optimal coupling between two empirical measures.
#[derive(Debug, Clone)]
pub enum PlanKind {
    /// Row i of the source matches `matching[i]` in the target.
    Matching(Vec<usize>),
    /// General n×m coupling with prescribed marginals.
    Coupling(DenseArray),
}

#[derive(Debug, Clone)]
pub struct TransportPlan {
    pub kind: PlanKind,
    /// Σ π_ij ‖x_i − y_j‖² (squared-distance units).
    pub cost: f64,
}

impl TransportPlan {
    /// Recompute the plan cost from its entries; used by the invariants.
    pub fn recompute_cost(&self, p: &EmpiricalMeasure, q: &EmpiricalMeasure) -> f64 {
        match &self.kind {
            PlanKind::Matching(m) => (0..p.len())
                .map(|i| p.weights()[i] * squared_dist(p.point(i), q.point(m[i])))
                .sum(),
            PlanKind::Coupling(c) => {
                let mut acc = 0.0;
                for i in 0..p.len() {
                    for j in 0..q.len() {
                        let pij = c.row(i)[j];
                        if pij > 0.0 {
                            acc += pij * squared_dist(p.point(i), q.point(j));
                        }
                    }
                }
                acc
            }
        }
    }

    /// Marginal residuals (max row-sum error, max column-sum error).
    pub fn marginal_residuals(&self, p: &EmpiricalMeasure, q: &EmpiricalMeasure) -> (f64, f64) {
        match &self.kind {
            PlanKind::Matching(m) => {
                // A matching couples point i to m[i] with mass w_i; the column
                // marginal is exact when the match is a permutation.
                let mut col = vec![0.0; q.len()];
                for (i, &j) in m.iter().enumerate() {
                    col[j] += p.weights()[i];
                }
                let ce = col
                    .iter()
                    .zip(q.weights())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                (0.0, ce)
            }
            PlanKind::Coupling(c) => {
                let mut re: f64 = 0.0;
                for i in 0..p.len() {
                    let s: f64 = c.row(i).iter().sum();
                    re = re.max((s - p.weights()[i]).abs());
                }
                let mut ce: f64 = 0.0;
                for j in 0..q.len() {
                    let s: f64 = (0..p.len()).map(|i| c.row(i)[j]).sum();
                    ce = ce.max((s - q.weights()[j]).abs());
                }
                (re, ce)
            }
        }
    }
}

pub fn squared_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn kahan_sum(values: &[f64]) -> f64 {
    let mut s = 0.0;
    let mut c = 0.0;
    for &v in values {
        let y = v - c;
        let t = s + y;
        c = (t - s) - y;
        s = t;
    }
    s
}

/// Exact W2 between uniform equal-size clouds via optimal assignment; 1-D
/// inputs with general weights fall back to the exact quantile coupling.
/// Returns (W2, plan) with plan cost = W2².
pub fn w2_assignment(p: &EmpiricalMeasure, q: &EmpiricalMeasure) -> Result<(f64, TransportPlan)> {
    if p.dim() != q.dim() {
        return Err(Error::shape(format!("dimension {} vs {}", p.dim(), q.dim())));
    }
    let uniform_equal = p.len() == q.len() && p.is_uniform() && q.is_uniform();
    if uniform_equal {
        let n = p.len();
        if n > MAX_ASSIGNMENT_SIZE {
            return Err(Error::Unsupported(format!(
                "assignment capped at n ≤ {MAX_ASSIGNMENT_SIZE}, got {n}"
            )));
        }
        let mut cost = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                cost[i * n + j] = squared_dist(p.point(i), q.point(j));
            }
        }
        let (matching, total) = hungarian::solve(&cost, n);
        let mean_cost = total / n as f64;
        return Ok((
            mean_cost.max(0.0).sqrt(),
            TransportPlan { kind: PlanKind::Matching(matching), cost: mean_cost },
        ));
    }
    if p.dim() == 1 {
        return w2_1d_coupling(p, q);
    }
    Err(Error::Unsupported(
        "w2_assignment needs uniform equal-size clouds (or 1-D inputs); resample first".into(),
    ))
}

/// W2 between equal-size uniform 1-D samples via sorted pairing.
pub fn w2_1d(p: &EmpiricalMeasure, q: &EmpiricalMeasure) -> Result<f64> {
    if p.dim() != 1 || q.dim() != 1 {
        return Err(Error::shape("w2_1d requires d = 1"));
    }
    if p.len() != q.len() || !p.is_uniform() || !q.is_uniform() {
        return Err(Error::invalid("w2_1d requires equal-size uniform samples"));
    }
    let mut a: Vec<f64> = (0..p.len()).map(|i| p.point(i)[0]).collect();
    let mut b: Vec<f64> = (0..q.len()).map(|i| q.point(i)[0]).collect();
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let mean: f64 =
        a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / p.len() as f64;
    Ok(mean.sqrt())
}

/// Exact 1-D quantile coupling for arbitrary weights and sizes.
fn w2_1d_coupling(p: &EmpiricalMeasure, q: &EmpiricalMeasure) -> Result<(f64, TransportPlan)> {
    let mut pi: Vec<usize> = (0..p.len()).collect();
    let mut qi: Vec<usize> = (0..q.len()).collect();
    pi.sort_by(|&a, &b| p.point(a)[0].partial_cmp(&p.point(b)[0]).unwrap());
    qi.sort_by(|&a, &b| q.point(a)[0].partial_cmp(&q.point(b)[0]).unwrap());

    let mut coupling = DenseArray::zeros(vec![p.len(), q.len()]);
    let (mut i, mut j) = (0usize, 0usize);
    let mut rem_p = p.weights()[pi[0]];
    let mut rem_q = q.weights()[qi[0]];
    let mut cost = 0.0;
    loop {
        let mass = rem_p.min(rem_q);
        if mass > 0.0 {
            let (si, tj) = (pi[i], qi[j]);
            let c = coupling.data_mut();
            c[si * q.len() + tj] += mass;
            cost += mass * squared_dist(p.point(si), q.point(tj));
        }
        rem_p -= mass;
        rem_q -= mass;
        if rem_p <= 1e-15 {
            i += 1;
            if i >= pi.len() {
                break;
            }
            rem_p = p.weights()[pi[i]];
        }
        if rem_q <= 1e-15 {
            j += 1;
            if j >= qi.len() {
                break;
            }
            rem_q = q.weights()[qi[j]];
        }
    }
    Ok((cost.max(0.0).sqrt(), TransportPlan { kind: PlanKind::Coupling(coupling), cost }))
}

/// Closed-form W2 between diagonal Gaussians:
/// √(‖m_A − m_B‖² + Σ_i (√v_{A,i} − √v_{B,i})²).
pub fn w2_gaussian_diag(a: &DiagGaussian, b: &DiagGaussian) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::shape("gaussian dimension mismatch"));
    }
    let mean_term: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y) * (x - y)).sum();
    let var_term: f64 = a
        .var
        .iter()
        .zip(&b.var)
        .map(|(x, y)| {
            let s = x.sqrt() - y.sqrt();
            s * s
        })
        .sum();
    Ok((mean_term + var_term).sqrt())
}

/// Monge cost of a point map: E_{x∼P} ‖x − T(x)‖² (squared units). Always an
/// upper bound on W2²(T_#P, P).
pub fn pushforward_cost<F>(map: F, p: &EmpiricalMeasure) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let mut acc = 0.0;
    for i in 0..p.len() {
        let y = map(p.point(i))?;
        if y.len() != p.dim() {
            return Err(Error::shape("pushforward_cost: map changed dimension"));
        }
        acc += p.weights()[i] * squared_dist(p.point(i), &y);
    }
    Ok(acc)
}

/// Draw `count` samples from the Gaussian-kernel smoothing Σ_i w_i N(x_i, h²I).
pub fn kernel_smooth_sample(
    q: &EmpiricalMeasure,
    h: f64,
    count: usize,
    seed: u64,
) -> Result<EmpiricalMeasure> {
    if !(h > 0.0) {
        return Err(Error::invalid(format!("bandwidth h = {h} must be > 0")));
    }
    if count == 0 {
        return Err(Error::invalid("kernel_smooth_sample: count must be ≥ 1"));
    }
    let mut rng = rng::substream(seed, "kernel-smooth");
    let d = q.dim();
    // Cumulative weights for component selection.
    let mut cdf = Vec::with_capacity(q.len());
    let mut acc = 0.0;
    for &w in q.weights() {
        acc += w;
        cdf.push(acc);
    }
    let mut data = Vec::with_capacity(count * d);
    let mut labels = q.labels().map(|_| Vec::with_capacity(count));
    for _ in 0..count {
        let u: f64 = rng.gen::<f64>() * acc;
        let comp = match cdf.binary_search_by(|c| c.partial_cmp(&u).unwrap()) {
            Ok(i) => i,
            Err(i) => i.min(q.len() - 1),
        };
        for j in 0..d {
            data.push(q.point(comp)[j] + h * rng::normal(&mut rng));
        }
        if let (Some(ls), Some(src)) = (labels.as_mut(), q.labels()) {
            ls.push(src[comp]);
        }
    }
    let mut out = EmpiricalMeasure::uniform(DenseArray::new(vec![count, d], data)?)?;
    if let Some(ls) = labels {
        out = out.with_labels(ls)?;
    }
    Ok(out)
}
