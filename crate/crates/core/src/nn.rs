//! Fully-connected networks over the autodiff primitives.
//!
//! One [`Mlp`] backs velocity fields, classifiers, and detectors. Hidden
//! layers share a single activation; the output layer is linear. The plain
//! forward pass and the tape forward pass call the same kernels in the same
//! order, so their outputs are bitwise identical.

use crate::autodiff::{DenseArray, NodeId, ParamId, ParamStore, StoreHandle, Tape};
use crate::error::{Error, Result};
use crate::rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Softplus { beta: f64 },
    Tanh,
    Relu,
}

impl Activation {
    /// The attacker default: softplus with β = 20.
    pub fn softplus_default() -> Self {
        Activation::Softplus { beta: 20.0 }
    }

    pub fn apply_scalar(&self, t: f64) -> f64 {
        match self {
            Activation::Softplus { beta } => crate::nn::softplus_scalar(t, *beta),
            Activation::Tanh => t.tanh(),
            Activation::Relu => t.max(0.0),
        }
    }
}

pub(crate) fn softplus_scalar(t: f64, beta: f64) -> f64 {
    let z = beta * t;
    if z > 0.0 {
        t + (-z).exp().ln_1p() / beta
    } else {
        z.exp().ln_1p() / beta
    }
}

/// Multi-layer perceptron owning its parameters.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub store: ParamStore,
    layers: Vec<(ParamId, ParamId)>,
}

/// Tape node ids of one registration of an [`Mlp`]'s parameters. Register
/// once per tape; reuse across repeated evaluations so adjoints accumulate on
/// a single node per parameter.
pub struct MlpNodes {
    layers: Vec<(NodeId, NodeId)>,
}

impl Mlp {
    /// Seeded init: weights ~ N(0, 1/fan_in), biases 0. `zero_last` zeroes the
    /// output layer so the network starts as the zero map.
    pub fn new(
        widths: &[usize],
        activation: Activation,
        zero_last: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::invalid("Mlp: need at least input and output widths"));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(Error::invalid("Mlp: zero width"));
        }
        let mut store = ParamStore::new();
        let mut layers = Vec::new();
        let n_layers = widths.len() - 1;
        for l in 0..n_layers {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let scale = if zero_last && l == n_layers - 1 {
                0.0
            } else {
                (1.0 / fan_in as f64).sqrt()
            };
            let w: Vec<f64> = rng::normal_vec(rng, fan_out * fan_in)
                .into_iter()
                .map(|v| v * scale)
                .collect();
            let wid = store.add(&format!("w{l}"), DenseArray::matrix(fan_out, fan_in, w)?);
            let bid = store.add(&format!("b{l}"), DenseArray::vector(vec![0.0; fan_out]));
            layers.push((wid, bid));
        }
        Ok(Mlp { widths: widths.to_vec(), activation, store, layers })
    }

    /// Rebuild an Mlp around an existing store (checkpoint load).
    pub fn from_store(widths: &[usize], activation: Activation, store: ParamStore) -> Result<Self> {
        let n_layers = widths.len() - 1;
        if store.len() != 2 * n_layers {
            return Err(Error::invalid(format!(
                "store has {} params, widths imply {}",
                store.len(),
                2 * n_layers
            )));
        }
        let mut layers = Vec::new();
        let ids: Vec<ParamId> = store.ids().collect();
        for l in 0..n_layers {
            let (wid, bid) = (ids[2 * l], ids[2 * l + 1]);
            let expect_w = [widths[l + 1], widths[l]];
            if store.value(wid).shape() != expect_w || store.value(bid).numel() != widths[l + 1] {
                return Err(Error::shape(format!("layer {l} shapes do not match widths")));
            }
            layers.push((wid, bid));
        }
        Ok(Mlp { widths: widths.to_vec(), activation, store, layers })
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    /// Plain batched forward: x is [n, in] → [n, out].
    pub fn forward(&self, x: &DenseArray) -> Result<DenseArray> {
        let mut cur = x.clone();
        for (l, (wid, bid)) in self.layers.iter().enumerate() {
            cur = crate::autodiff::array_affine(&cur, self.store.value(*wid), self.store.value(*bid))?;
            if l + 1 < self.layers.len() {
                for v in cur.data_mut() {
                    *v = self.activation.apply_scalar(*v);
                }
            }
        }
        Ok(cur)
    }

    /// Register trainable parameters on a tape.
    pub fn register_params(&self, tape: &mut Tape, handle: StoreHandle) -> Result<MlpNodes> {
        let mut layers = Vec::new();
        for (wid, bid) in &self.layers {
            let wn = tape.param(handle, &self.store, *wid)?;
            let bn = tape.param(handle, &self.store, *bid)?;
            layers.push((wn, bn));
        }
        Ok(MlpNodes { layers })
    }

    /// Register parameters as constants (frozen network).
    pub fn register_frozen(&self, tape: &mut Tape) -> Result<MlpNodes> {
        let mut layers = Vec::new();
        for (wid, bid) in &self.layers {
            let wn = tape.constant(self.store.value(*wid).clone())?;
            let bn = tape.constant(self.store.value(*bid).clone())?;
            layers.push((wn, bn));
        }
        Ok(MlpNodes { layers })
    }

    /// Tape forward through previously registered parameter nodes.
    pub fn forward_with(&self, tape: &mut Tape, nodes: &MlpNodes, x: NodeId) -> Result<NodeId> {
        let mut cur = x;
        for (l, (wn, bn)) in nodes.layers.iter().enumerate() {
            cur = tape.affine(cur, *wn, *bn)?;
            if l + 1 < nodes.layers.len() {
                cur = match self.activation {
                    Activation::Softplus { beta } => tape.softplus(cur, beta)?,
                    Activation::Tanh => tape.tanh(cur)?,
                    Activation::Relu => tape.relu(cur)?,
                };
            }
        }
        Ok(cur)
    }

    /// One-tape convenience: register frozen and evaluate.
    pub fn forward_frozen(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        let nodes = self.register_frozen(tape)?;
        self.forward_with(tape, &nodes, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_difference_grad;

    #[test]
    fn plain_and_tape_forward_are_bitwise_identical() {
        let mut r = rng::seeded(11);
        let mlp = Mlp::new(&[3, 8, 2], Activation::Tanh, false, &mut r).unwrap();
        let x = DenseArray::matrix(4, 3, rng::normal_vec(&mut r, 12)).unwrap();
        let plain = mlp.forward(&x).unwrap();

        let mut tape = Tape::new();
        let xn = tape.input(x).unwrap();
        let yn = mlp.forward_frozen(&mut tape, xn).unwrap();
        assert_eq!(plain.data(), tape.value(yn).data());
    }

    #[test]
    fn zero_last_layer_gives_zero_output() {
        let mut r = rng::seeded(5);
        let mlp = Mlp::new(&[2, 16, 2], Activation::Softplus { beta: 20.0 }, true, &mut r).unwrap();
        let x = DenseArray::matrix(3, 2, rng::normal_vec(&mut r, 6)).unwrap();
        let y = mlp.forward(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        // Scalar objective: mean of squared outputs of a 2-layer MLP.
        let mut r = rng::seeded(42);
        let mlp = Mlp::new(&[2, 6, 2], Activation::Tanh, false, &mut r).unwrap();
        let x0 = rng::normal_vec(&mut r, 2);

        let objective = |x: &[f64]| -> f64 {
            let xa = DenseArray::matrix(1, 2, x.to_vec()).unwrap();
            let y = mlp.forward(&xa).unwrap();
            y.data().iter().map(|v| v * v).sum::<f64>() / y.numel() as f64
        };

        let mut tape = Tape::new();
        let xn = tape.input(DenseArray::matrix(1, 2, x0.clone()).unwrap()).unwrap();
        let yn = mlp.forward_frozen(&mut tape, xn).unwrap();
        let sq = tape.squared_norm(yn).unwrap();
        let obj = tape.scale(sq, 0.5).unwrap();
        tape.backward_scalar(obj).unwrap();
        let grad = tape.adjoint(xn).unwrap().data().to_vec();

        let fd = finite_difference_grad(objective, &x0, 1e-4);
        for (g, f) in grad.iter().zip(&fd) {
            let denom = f.abs().max(1e-8);
            assert!((g - f).abs() / denom < 1e-5, "grad {g} vs fd {f}");
        }
    }
}
