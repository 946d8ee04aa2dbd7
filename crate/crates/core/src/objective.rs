//! Differentiable scalar objectives over a flat parameter vector.

use crate::error::{shape_err, Result};
use crate::nn::{clip_grad_inf, task_loss, task_loss_value, LabeledBatch, MlpSpec};
use crate::scalar::Real;
use crate::vector::{check_dim, GradVector};

/// A loss `L(theta)` together with its gradient.
pub trait Objective<S: Real = f64>: Sync {
    fn loss_grad(&self, theta: &[S]) -> Result<(S, GradVector<S>)>;

    fn loss(&self, theta: &[S]) -> Result<S> {
        Ok(self.loss_grad(theta)?.0)
    }
}

impl<S: Real, O: Objective<S> + ?Sized> Objective<S> for &O {
    fn loss_grad(&self, theta: &[S]) -> Result<(S, GradVector<S>)> {
        (**self).loss_grad(theta)
    }

    fn loss(&self, theta: &[S]) -> Result<S> {
        (**self).loss(theta)
    }
}

/// MLP loss on a fixed batch.
#[derive(Debug, Clone, Copy)]
pub struct MlpObjective<'a, S = f64> {
    pub spec: &'a MlpSpec,
    pub batch: &'a LabeledBatch<S>,
}

impl<S: Real> Objective<S> for MlpObjective<'_, S> {
    fn loss_grad(&self, theta: &[S]) -> Result<(S, GradVector<S>)> {
        task_loss(self.spec, theta, self.batch)
    }

    fn loss(&self, theta: &[S]) -> Result<S> {
        task_loss_value(self.spec, theta, self.batch)
    }
}

/// `L(theta) = 1/2 (theta - c)^T A (theta - c)` with symmetric `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic<S = f64> {
    dim: usize,
    /// Row-major `dim x dim`.
    matrix: Vec<S>,
    center: Vec<S>,
}

impl<S: Real> Quadratic<S> {
    pub fn new(matrix: Vec<S>, center: Vec<S>) -> Result<Self> {
        let dim = center.len();
        if matrix.len() != dim * dim {
            return Err(shape_err(
                "Quadratic::new",
                format!("{} matrix entries", dim * dim),
                matrix.len(),
            ));
        }
        Ok(Self { dim, matrix, center })
    }

    pub fn diagonal(diag: &[S], center: Vec<S>) -> Result<Self> {
        check_dim("Quadratic::diagonal", center.len(), diag.len())?;
        let d = diag.len();
        let mut matrix = vec![S::zero(); d * d];
        for (i, &v) in diag.iter().enumerate() {
            matrix[i * d + i] = v;
        }
        Self::new(matrix, center)
    }

    /// `1/2 ||theta||^2`.
    pub fn isotropic(dim: usize) -> Self {
        Self::diagonal(&vec![S::one(); dim], vec![S::zero(); dim]).expect("consistent dims")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &[S] {
        &self.matrix
    }

    pub fn center(&self) -> &[S] {
        &self.center
    }
}

impl<S: Real> Objective<S> for Quadratic<S> {
    fn loss_grad(&self, theta: &[S]) -> Result<(S, GradVector<S>)> {
        check_dim("Quadratic::loss_grad", self.dim, theta.len())?;
        let diff: Vec<S> = theta.iter().zip(&self.center).map(|(&t, &c)| t - c).collect();
        let grad: Vec<S> = (0..self.dim)
            .map(|i| {
                self.matrix[i * self.dim..(i + 1) * self.dim]
                    .iter()
                    .zip(&diff)
                    .map(|(&a, &x)| a * x)
                    .sum()
            })
            .collect();
        let loss = S::lit(0.5) * diff.iter().zip(&grad).map(|(&x, &g)| x * g).sum::<S>();
        Ok((loss, GradVector::new(grad)))
    }
}

/// Wraps an objective so every gradient is clipped to `||g||_inf <= bound`.
#[derive(Debug, Clone, Copy)]
pub struct Clipped<O, S = f64> {
    pub inner: O,
    pub bound: S,
}

impl<S: Real, O: Objective<S>> Objective<S> for Clipped<O, S> {
    fn loss_grad(&self, theta: &[S]) -> Result<(S, GradVector<S>)> {
        let (l, g) = self.inner.loss_grad(theta)?;
        Ok((l, clip_grad_inf(&g, self.bound)))
    }

    fn loss(&self, theta: &[S]) -> Result<S> {
        self.inner.loss(theta)
    }
}

/// Adapter turning a closure into an [`Objective`].
pub struct FnObjective<F>(pub F);

impl<S, F> Objective<S> for FnObjective<F>
where
    S: Real,
    F: Fn(&[S]) -> Result<(S, GradVector<S>)> + Sync,
{
    fn loss_grad(&self, theta: &[S]) -> Result<(S, GradVector<S>)> {
        (self.0)(theta)
    }
}
