//! Minimal reverse-mode automatic differentiation over dense f64 arrays.
//!
//! The primitive set is exactly what velocity fields, MLP classifiers, and the
//! risk functions in this crate need: dense affine maps, elementwise
//! softplus(β)/tanh/relu, add/sub/mul/scale, sum/mean, squared norms,
//! row-wise log-sum-exp, and softmax cross-entropy. No broadcasting beyond the
//! affine bias, no higher-order derivatives, no graph rewriting.
//!
//! A [`Tape`] records operations eagerly: recording an op computes its forward
//! value immediately and keeps it for the backward pass. Parameters live in a
//! [`ParamStore`]; registering them on a tape snapshots their values, and
//! after `backward` the accumulated parameter gradients are folded back into
//! the store in registration order.

mod array;
mod params;
mod tape;

pub use array::DenseArray;
pub use params::{AdamConfig, Checkpoint, ParamId, ParamStore};
pub use tape::{NodeId, StoreHandle, Tape};

pub(crate) use array::affine_forward as array_affine;

/// Central finite-difference gradient of a scalar function, the oracle used
/// throughout the test suites to validate tape gradients.
pub fn finite_difference_grad<F>(mut f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let xi = x[i];
        xp[i] = xi + h;
        let fp = f(&xp);
        xp[i] = xi - h;
        let fm = f(&xp);
        xp[i] = xi;
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}
