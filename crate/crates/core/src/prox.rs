//! Proximal-point oracle, discrete dual function, radius↔penalty calibration,
//! and first-order optimality residuals.
//!
//! The proximal problem min_z V(z) + ‖z − x‖²/(2γ) is solved in closed form
//! for quadratic and linear potentials and by gradient descent otherwise; with
//! γ·L < 1 the surrogate is strongly convex and descent converges linearly.
//! The dual function of the trust-region problem is
//! G(λ) = E_{x∼P̂} inf_z [V(z) + λ‖x − z‖²] − λε², evaluated per point with
//! γ = 1/(2λ). The residuals implement the stationarity conditions
//! γ∇V(z*) + (z* − x) = 0 at a proximal point, ∇V + (Id − T_Q^P)/γ = 0 at an
//! optimal pushforward, and the backward-Euler identity
//! x_{k+1} = x_k − γ∇V(x_{k+1}).

use crate::error::{Error, Result};
use crate::measures::{squared_dist, w2_assignment, EmpiricalMeasure, PlanKind};
use crate::par;
use crate::risks::Potential;
use crate::rng;

/// Solution of one proximal problem.
#[derive(Debug, Clone)]
pub struct ProxResult {
    pub minimizer: Vec<f64>,
    /// Envelope value u(x, γ) = V(z*) + ‖z* − x‖²/(2γ).
    pub envelope: f64,
    /// Stationarity residual ‖γ∇V(z*) + z* − x‖.
    pub residual: f64,
    pub iterations: usize,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, Copy)]
pub struct ProxConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ProxConfig {
    fn default() -> Self {
        ProxConfig { tol: 1e-8, max_iter: 10_000 }
    }
}

/// Proximal point of V at x with penalty γ.
pub fn prox_point(
    v: &Potential,
    x: &[f64],
    label: Option<usize>,
    gamma: f64,
    cfg: &ProxConfig,
) -> Result<ProxResult> {
    if !(gamma > 0.0) {
        return Err(Error::invalid(format!("prox: gamma = {gamma} must be > 0")));
    }
    use crate::risks::PotentialKind::*;
    let (z, iterations, warning) = match &v.kind {
        Quadratic { center, scale } => {
            // argmin (a/2)‖z−c‖² + ‖z−x‖²/(2γ)  ⇒  z = (x + γ a c)/(1 + γ a)
            let z = x
                .iter()
                .zip(center)
                .map(|(xi, ci)| (xi + gamma * scale * ci) / (1.0 + gamma * scale))
                .collect();
            (z, 0, None)
        }
        Linear { slope } => {
            let z = x.iter().zip(slope).map(|(xi, ai)| xi - gamma * ai).collect();
            (z, 0, None)
        }
        NegatedLoss(_) => descend(v, x, label, gamma, cfg)?,
    };
    let grad = v.grad_point(&z, label)?;
    let residual = residual_norm(&z, x, &grad, gamma);
    let envelope = v.value_point(&z, label)? + squared_dist(&z, x) / (2.0 * gamma);
    if iterations >= cfg.max_iter && residual > cfg.tol {
        return Err(Error::NoConvergence(format!(
            "prox_point: residual {residual:.3e} > tol {:.1e} after {} iterations",
            cfg.tol, cfg.max_iter
        )));
    }
    Ok(ProxResult { minimizer: z, envelope, residual, iterations, warning })
}

fn residual_norm(z: &[f64], x: &[f64], grad: &[f64], gamma: f64) -> f64 {
    z.iter()
        .zip(x)
        .zip(grad)
        .map(|((zi, xi), gi)| {
            let r = gamma * gi + zi - xi;
            r * r
        })
        .sum::<f64>()
        .sqrt()
}

/// Gradient descent on the strongly convex surrogate.
fn descend(
    v: &Potential,
    x: &[f64],
    label: Option<usize>,
    gamma: f64,
    cfg: &ProxConfig,
) -> Result<(Vec<f64>, usize, Option<String>)> {
    // Estimated smoothness: declared bound, or a local finite-difference probe.
    let l_hat = match v.smoothness {
        Some(l) => l,
        None => local_smoothness(v, x, label)?,
    };
    let mut warning = None;
    if gamma * l_hat >= 1.0 {
        warning = Some(format!(
            "gamma*L = {:.3} ≥ 1: proximal minimizer may not be unique",
            gamma * l_hat
        ));
    }
    let step = 0.9 * gamma / (1.0 + gamma * l_hat);
    let mut z = x.to_vec();
    for it in 0..cfg.max_iter {
        let grad_v = v.grad_point(&z, label)?;
        let res = residual_norm(&z, x, &grad_v, gamma);
        if res <= cfg.tol {
            return Ok((z, it, warning));
        }
        for i in 0..z.len() {
            // ∇F = ∇V + (z − x)/γ
            z[i] -= step * (grad_v[i] + (z[i] - x[i]) / gamma);
        }
        if z.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("prox descent diverged".into()));
        }
    }
    Ok((z, cfg.max_iter, warning))
}

fn local_smoothness(v: &Potential, x: &[f64], label: Option<usize>) -> Result<f64> {
    let mut r = rng::substream(0x5e0f, "prox-local-smoothness");
    let mut best = 1e-6_f64;
    for _ in 0..32 {
        let a: Vec<f64> = x.iter().map(|xi| xi + 0.5 * rng::normal(&mut r)).collect();
        let b: Vec<f64> = x.iter().map(|xi| xi + 0.5 * rng::normal(&mut r)).collect();
        let ga = v.grad_point(&a, label)?;
        let gb = v.grad_point(&b, label)?;
        let num =
            ga.iter().zip(&gb).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        let den = squared_dist(&a, &b).sqrt();
        if den > 1e-9 {
            best = best.max(num / den);
        }
    }
    Ok(best)
}

/// Moreau envelope value u(x, γ).
pub fn moreau_envelope(
    v: &Potential,
    x: &[f64],
    label: Option<usize>,
    gamma: f64,
    cfg: &ProxConfig,
) -> Result<f64> {
    Ok(prox_point(v, x, label, gamma, cfg)?.envelope)
}

/// Dual function evaluation at one multiplier.
#[derive(Debug, Clone)]
pub struct DualEval {
    pub lambda: f64,
    /// G(λ) = Σ w_i u(x_i, 1/(2λ)) − λ ε².
    pub value: f64,
    pub per_point: Vec<f64>,
}

/// G(λ) for a discrete reference measure: per-point proximal solves with
/// γ = 1/(2λ), weighted mean, minus λε². Per-point solves run in parallel and
/// reduce in point order.
pub fn dual_value_discrete(
    v: &Potential,
    p: &EmpiricalMeasure,
    lambda: f64,
    epsilon: f64,
    cfg: &ProxConfig,
) -> Result<DualEval> {
    if !(lambda > 0.0) {
        return Err(Error::invalid("dual: lambda must be > 0"));
    }
    if epsilon < 0.0 {
        return Err(Error::invalid("dual: epsilon must be ≥ 0"));
    }
    let gamma = 1.0 / (2.0 * lambda);
    let results: Vec<Result<f64>> = par::map_range(p.len(), |i| {
        let label = p.labels().map(|ls| ls[i]);
        Ok(prox_point(v, p.point(i), label, gamma, cfg)?.envelope)
    });
    let mut per_point = Vec::with_capacity(p.len());
    for r in results {
        per_point.push(r?);
    }
    let mean: f64 = p.weights().iter().zip(&per_point).map(|(w, u)| w * u).sum();
    Ok(DualEval { lambda, value: mean - lambda * epsilon * epsilon, per_point })
}

/// Outcome of the radius↔γ bisection.
#[derive(Debug, Clone)]
pub struct CalibrationResult {
    pub gamma: f64,
    pub achieved_radius: f64,
    pub target_radius: f64,
    pub bracket: (f64, f64),
    pub trainings: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
}

/// Bisection on γ (log scale) until the trained map's radius hits the target.
/// `train_fn(γ)` returns the trained artifact and its achieved W2 radius;
/// radius is probed for monotonicity over the bracket and a violation only
/// warns, since γ controls the radius indirectly.
pub fn calibrate_gamma<T>(
    mut train_fn: impl FnMut(f64) -> Result<(T, f64)>,
    target_eps: f64,
    bracket: (f64, f64),
    tol: f64,
    max_bisections: usize,
) -> Result<(T, CalibrationResult)> {
    let (mut lo, mut hi) = bracket;
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::invalid("calibrate: need 0 < lo < hi"));
    }
    if target_eps < 0.0 {
        return Err(Error::invalid("calibrate: target radius must be ≥ 0"));
    }
    let mut warnings = Vec::new();
    let mut trainings = 0;
    let mut run = |g: f64, trainings: &mut usize| -> Result<(T, f64)> {
        *trainings += 1;
        train_fn(g)
    };

    let (art_lo, r_lo) = run(lo, &mut trainings)?;
    if (r_lo - target_eps).abs() <= tol {
        return Ok((
            art_lo,
            CalibrationResult {
                gamma: lo,
                achieved_radius: r_lo,
                target_radius: target_eps,
                bracket,
                trainings,
                converged: true,
                warnings,
            },
        ));
    }
    let (art_hi, r_hi) = run(hi, &mut trainings)?;
    if r_lo > r_hi {
        warnings.push(format!(
            "radius not monotone over bracket: r({lo}) = {r_lo:.4} > r({hi}) = {r_hi:.4}"
        ));
    }
    if (r_hi - target_eps).abs() <= tol {
        return Ok((
            art_hi,
            CalibrationResult {
                gamma: hi,
                achieved_radius: r_hi,
                target_radius: target_eps,
                bracket,
                trainings,
                converged: true,
                warnings,
            },
        ));
    }
    if !(r_lo - tol <= target_eps && target_eps <= r_hi + tol) {
        return Err(Error::invalid(format!(
            "calibrate: bracket radii [{r_lo:.4}, {r_hi:.4}] do not straddle target {target_eps}"
        )));
    }

    let mut best: (T, f64, f64) = if (r_lo - target_eps).abs() < (r_hi - target_eps).abs() {
        (art_lo, lo, r_lo)
    } else {
        (art_hi, hi, r_hi)
    };
    for _ in 0..max_bisections {
        // Log-space midpoint; fall back to the arithmetic one if degenerate.
        let mid = (0.5 * (lo.ln() + hi.ln())).exp();
        let mid = if mid <= lo || mid >= hi { 0.5 * (lo + hi) } else { mid };
        let (art, r) = run(mid, &mut trainings)?;
        if (r - target_eps).abs() < (best.2 - target_eps).abs() {
            best = (art, mid, r);
        }
        if (r - target_eps).abs() <= tol {
            let (art, gamma, achieved) = best;
            return Ok((
                art,
                CalibrationResult {
                    gamma,
                    achieved_radius: achieved,
                    target_radius: target_eps,
                    bracket,
                    trainings,
                    converged: true,
                    warnings,
                },
            ));
        }
        if r < target_eps {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (art, gamma, achieved) = best;
    let converged = (achieved - target_eps).abs() <= tol;
    Ok((
        art,
        CalibrationResult {
            gamma,
            achieved_radius: achieved,
            target_radius: target_eps,
            bracket,
            trainings,
            converged,
            warnings,
        },
    ))
}

/// √(E_{z∼Q} ‖∇V(z) + (z − T_Q^P(z))/γ‖²) with T_Q^P the assignment OT map.
/// Unequal sizes are subsampled to match (seeded), with a warning.
pub fn foc_residual(
    v: &Potential,
    p: &EmpiricalMeasure,
    q: &EmpiricalMeasure,
    gamma: f64,
) -> Result<(f64, Vec<String>)> {
    if !(gamma > 0.0) {
        return Err(Error::invalid("foc_residual: gamma must be > 0"));
    }
    let mut warnings = Vec::new();
    let (p, q) = if p.len() != q.len() {
        let m = p.len().min(q.len());
        warnings.push(format!(
            "foc_residual: resampling {}/{} points to {m}",
            p.len(),
            q.len()
        ));
        let mut r = rng::substream(0xf0c, "foc-resample");
        (p.subsample(m, &mut r)?, q.subsample(m, &mut r)?)
    } else {
        (p.clone(), q.clone())
    };
    let (_, plan) = w2_assignment(&q, &p)?;
    let matching = match plan.kind {
        PlanKind::Matching(m) => m,
        PlanKind::Coupling(_) => {
            return Err(Error::Unsupported(
                "foc_residual needs uniform equal-size measures (assignment map)".into(),
            ))
        }
    };
    let mut acc = 0.0;
    for j in 0..q.len() {
        let z = q.point(j);
        let target = p.point(matching[j]);
        let grad = v.grad_point(z, q.labels().map(|ls| ls[j]))?;
        let term: f64 = grad
            .iter()
            .zip(z.iter().zip(target))
            .map(|(g, (zi, ti))| {
                let r = g + (zi - ti) / gamma;
                r * r
            })
            .sum();
        acc += q.weights()[j] * term;
    }
    Ok((acc.sqrt(), warnings))
}

/// max over pairs of ‖x_{k+1} − x_k + γ∇V(x_{k+1})‖.
pub fn backward_euler_residual(
    v: &Potential,
    pairs: &[(Vec<f64>, Vec<f64>)],
    labels: Option<&[usize]>,
    gamma: f64,
) -> Result<f64> {
    if gamma < 0.0 {
        return Err(Error::invalid("backward_euler_residual: gamma must be ≥ 0"));
    }
    let mut worst = 0.0_f64;
    for (idx, (xk, xk1)) in pairs.iter().enumerate() {
        let grad = v.grad_point(xk1, labels.map(|ls| ls[idx]))?;
        let r: f64 = xk1
            .iter()
            .zip(xk)
            .zip(&grad)
            .map(|((a, b), g)| {
                let t = a - b + gamma * g;
                t * t
            })
            .sum::<f64>()
            .sqrt();
        worst = worst.max(r);
    }
    Ok(worst)
}

/// Pairs (x, T(x)) for a map over a measure, the inputs to
/// [`backward_euler_residual`].
pub fn transport_pairs(
    map: impl Fn(&[f64]) -> Result<Vec<f64>>,
    p: &EmpiricalMeasure,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    (0..p.len())
        .map(|i| {
            let x = p.point(i).to_vec();
            let y = map(&x)?;
            Ok((x, y))
        })
        .collect()
}
