//! Sharpness-aware bi-level meta-learning.
//!
//! The crate is layered bottom-up:
//!
//! - [`autodiff`]: dense tensors and a define-by-run reverse-mode graph.
//! - [`nn`]: multilayer perceptrons over one flat parameter vector.
//! - [`sharpness`]: SAM perturbations, the gradient-matching (SAGM)
//!   objective, surrogate gap, alignment, SGD and Adam.
//! - [`meta`]: first-order MAML, SharpMAML and DGS-MAML training loops.
//! - [`tasks`]: sinusoid, blob, quadratic and IDX-backed few-shot tasks.
//! - [`theory`]: convergence bounds, lemma checks and the PAC-Bayes bound.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the aliases at
//! the crate root fix `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod error;
pub mod meta;
pub mod nn;
pub mod objective;
pub mod scalar;
pub mod sharpness;
pub mod tasks;
pub mod theory;
pub mod vector;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Tensor64 = autodiff::Tensor<f64>;
pub type Tensor32 = autodiff::Tensor<f32>;
pub type Params = vector::ParamVector<f64>;
pub type Grad = vector::GradVector<f64>;
pub type Config = sharpness::SharpnessConfig<f64>;
pub type Report = meta::MetaStepReport<f64>;
pub type Trace = meta::RunTrace<f64>;
pub type Batch = tasks::TaskBatch<f64>;
