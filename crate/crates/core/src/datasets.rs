//! Seeded synthetic dataset generators.

use crate::autodiff::DenseArray;
use crate::error::{Error, Result};
use crate::measures::EmpiricalMeasure;
use crate::rng;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Gaussian {
        mean: Vec<f64>,
        var: Vec<f64>,
    },
    GaussianMixture {
        means: Vec<Vec<f64>>,
        variances: Vec<Vec<f64>>,
        weights: Vec<f64>,
    },
    TwoMoons {
        noise: f64,
    },
    Csv {
        path: PathBuf,
    },
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            DatasetSpec::Gaussian { mean, var } => {
                if mean.len() != var.len() || mean.is_empty() {
                    return Err(Error::invalid("gaussian: mean/var lengths must match and be ≥ 1"));
                }
                if var.iter().any(|&v| !(v > 0.0)) {
                    return Err(Error::invalid("gaussian: variances must be > 0"));
                }
            }
            DatasetSpec::GaussianMixture { means, variances, weights } => {
                if means.is_empty() || means.len() != variances.len() || means.len() != weights.len()
                {
                    return Err(Error::invalid(
                        "mixture: means/variances/weights must have equal nonzero length",
                    ));
                }
                let d = means[0].len();
                if means.iter().any(|m| m.len() != d)
                    || variances.iter().any(|v| v.len() != d)
                {
                    return Err(Error::invalid("mixture: inconsistent component dimensions"));
                }
                if variances.iter().flatten().any(|&v| !(v > 0.0)) {
                    return Err(Error::invalid("mixture: variances must be > 0"));
                }
                if weights.iter().any(|&w| w < 0.0) || weights.iter().sum::<f64>() <= 0.0 {
                    return Err(Error::invalid("mixture: weights must be nonnegative, not all 0"));
                }
            }
            DatasetSpec::TwoMoons { noise } => {
                if *noise < 0.0 {
                    return Err(Error::invalid("two-moons: noise must be ≥ 0"));
                }
            }
            DatasetSpec::Csv { path } => {
                if !path.exists() {
                    return Err(Error::invalid(format!("csv dataset not found: {}", path.display())));
                }
            }
        }
        Ok(())
    }

    pub fn is_labeled(&self) -> bool {
        matches!(self, DatasetSpec::GaussianMixture { .. } | DatasetSpec::TwoMoons { .. })
    }
}

/// Draw `n` seeded samples; mixtures and moons come back labeled.
pub fn generate_dataset(spec: &DatasetSpec, n: usize, seed: u64) -> Result<EmpiricalMeasure> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::invalid("dataset size must be ≥ 1"));
    }
    let mut r = rng::substream(seed, "dataset");
    match spec {
        DatasetSpec::Gaussian { mean, var } => {
            let d = mean.len();
            let mut data = Vec::with_capacity(n * d);
            for _ in 0..n {
                for j in 0..d {
                    data.push(mean[j] + var[j].sqrt() * rng::normal(&mut r));
                }
            }
            EmpiricalMeasure::uniform(DenseArray::new(vec![n, d], data)?)
        }
        DatasetSpec::GaussianMixture { means, variances, weights } => {
            let d = means[0].len();
            let total: f64 = weights.iter().sum();
            let mut cdf = Vec::with_capacity(weights.len());
            let mut acc = 0.0;
            for w in weights {
                acc += w / total;
                cdf.push(acc);
            }
            let mut data = Vec::with_capacity(n * d);
            let mut labels = Vec::with_capacity(n);
            for _ in 0..n {
                let u: f64 = r.gen();
                let comp = cdf.iter().position(|&c| u <= c).unwrap_or(weights.len() - 1);
                for j in 0..d {
                    data.push(means[comp][j] + variances[comp][j].sqrt() * rng::normal(&mut r));
                }
                labels.push(comp);
            }
            EmpiricalMeasure::uniform(DenseArray::new(vec![n, d], data)?)?.with_labels(labels)
        }
        DatasetSpec::TwoMoons { noise } => {
            // Balanced: ⌈n/2⌉ on the upper moon, the rest on the lower.
            let n0 = n.div_ceil(2);
            let mut data = Vec::with_capacity(n * 2);
            let mut labels = Vec::with_capacity(n);
            for i in 0..n {
                let (label, theta) = if i < n0 {
                    (0usize, std::f64::consts::PI * r.gen::<f64>())
                } else {
                    (1usize, std::f64::consts::PI * r.gen::<f64>())
                };
                let (mut x, mut y) = (theta.cos(), theta.sin());
                if label == 1 {
                    x = 1.0 - x;
                    y = 0.5 - y;
                }
                x += noise * rng::normal(&mut r);
                y += noise * rng::normal(&mut r);
                data.push(x);
                data.push(y);
                labels.push(label);
            }
            EmpiricalMeasure::uniform(DenseArray::new(vec![n, 2], data)?)?.with_labels(labels)
        }
        DatasetSpec::Csv { path } => EmpiricalMeasure::from_csv(path),
    }
}

/// Two 1-D samples (one per class) for the two-sample testing benchmark:
/// class 0 from N(0,1), class 1 from N(2, 1.2²).
pub fn two_sample_1d(n_per_class: usize, seed: u64) -> Result<(EmpiricalMeasure, EmpiricalMeasure)> {
    let p0 = generate_dataset(
        &DatasetSpec::Gaussian { mean: vec![0.0], var: vec![1.0] },
        n_per_class,
        seed,
    )?;
    let p1 = generate_dataset(
        &DatasetSpec::Gaussian { mean: vec![2.0], var: vec![1.44] },
        n_per_class,
        seed.wrapping_add(1),
    )?;
    Ok((p0, p1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_mean_is_within_clt_bound() {
        let spec = DatasetSpec::Gaussian { mean: vec![0.0], var: vec![1.0] };
        let m = generate_dataset(&spec, 500, 7).unwrap();
        let mean: f64 = (0..m.len()).map(|i| m.point(i)[0]).sum::<f64>() / 500.0;
        assert!(mean.abs() < 5.0 / (500.0_f64).sqrt());
        // Reproducible.
        let m2 = generate_dataset(&spec, 500, 7).unwrap();
        assert_eq!(m.points().data(), m2.points().data());
    }

    #[test]
    fn degenerate_mixture_weights_put_all_labels_on_one_class() {
        let spec = DatasetSpec::GaussianMixture {
            means: vec![vec![0.0], vec![5.0]],
            variances: vec![vec![1.0], vec![1.0]],
            weights: vec![1.0, 0.0],
        };
        let m = generate_dataset(&spec, 100, 3).unwrap();
        assert!(m.labels().unwrap().iter().all(|&l| l == 0));
    }

    #[test]
    fn two_moons_is_balanced_with_two_labels() {
        let m = generate_dataset(&DatasetSpec::TwoMoons { noise: 0.05 }, 1000, 5).unwrap();
        let labels = m.labels().unwrap();
        assert_eq!(labels.iter().filter(|&&l| l == 0).count(), 500);
        assert_eq!(labels.iter().filter(|&&l| l == 1).count(), 500);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(generate_dataset(
            &DatasetSpec::Gaussian { mean: vec![0.0], var: vec![-1.0] },
            10,
            0
        )
        .is_err());
        assert!(generate_dataset(
            &DatasetSpec::Csv { path: PathBuf::from("/nonexistent/file.csv") },
            10,
            0
        )
        .is_err());
    }
}
