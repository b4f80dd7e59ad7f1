//! Worst-case (least favorable) distributions inside Wasserstein-2 balls.
//!
//! The library trains flow-based transport maps `T = T_K ∘ … ∘ T_1` so that the
//! pushforward `T_# P` maximizes a risk within a `W2` budget around a reference
//! measure `P`, by block-wise minimization of the proximal objective
//! `E[V(T(x)) + ‖x − T(x)‖² / (2γ)]` with `V` the negated loss. Everything is
//! f64, seeded, and deterministic; the crate ships the independent oracles used
//! to verify results at desk scale: exact assignment-based optimal transport,
//! closed-form proximal solutions, the discrete-LFD linear program, and
//! first-order optimality residuals.
//!
//! With the `parallel` feature (default) the data-parallel inner loops run on
//! rayon; disabling it falls back to sequential execution with identical
//! results (fixed reduction order everywhere).

pub mod autodiff;
pub mod datasets;
pub mod dro;
pub mod measures;
pub mod error;
pub mod flow;
pub mod nn;
pub mod par;
pub mod prox;
pub mod risks;
pub mod rng;

pub use error::{Error, Result};
