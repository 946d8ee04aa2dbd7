//! Flat parameter-space vectors.
//!
//! Every optimizer in the crate sees the model as one point in `R^d`. The
//! three newtypes below keep parameters, gradients and perturbations apart at
//! the type level while sharing the same dense storage.

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::scalar::Real;

macro_rules! flat_vector {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name<S = f64>(Vec<S>);

        impl<S: Real> $name<S> {
            pub fn new(values: Vec<S>) -> Self {
                Self(values)
            }

            pub fn zeros(dim: usize) -> Self {
                Self(vec![S::zero(); dim])
            }

            pub fn dim(&self) -> usize {
                self.0.len()
            }

            pub fn as_slice(&self) -> &[S] {
                &self.0
            }

            pub fn into_inner(self) -> Vec<S> {
                self.0
            }

            pub fn norm2(&self) -> S {
                norm2(&self.0)
            }

            pub fn norm_inf(&self) -> S {
                norm_inf(&self.0)
            }

            pub fn is_finite(&self) -> bool {
                self.0.iter().all(|v| v.is_finite())
            }

            /// Converts between scalar types (e.g. `f64` to `f32`).
            pub fn cast<T: Real>(&self) -> $name<T> {
                $name(self.0.iter().map(|v| T::lit(v.as_f64())).collect())
            }
        }

        impl<S> Deref for $name<S> {
            type Target = [S];
            fn deref(&self) -> &[S] {
                &self.0
            }
        }

        impl<S> DerefMut for $name<S> {
            fn deref_mut(&mut self) -> &mut [S] {
                &mut self.0
            }
        }

        impl<S> From<Vec<S>> for $name<S> {
            fn from(v: Vec<S>) -> Self {
                Self(v)
            }
        }
    };
}

flat_vector!(
    /// Model parameters `theta`.
    ParamVector
);
flat_vector!(
    /// Gradient aligned index-for-index with a [`ParamVector`].
    GradVector
);
flat_vector!(
    /// Weight-space perturbation (`epsilon` of a SAM-style ascent step).
    Perturbation
);

impl<S: Real> ParamVector<S> {
    /// `theta + scale * direction`.
    pub fn shifted(&self, direction: &[S], scale: S) -> Result<Self> {
        check_dim("ParamVector::shifted", self.dim(), direction.len())?;
        Ok(Self(
            self.0.iter().zip(direction).map(|(&t, &g)| t + scale * g).collect(),
        ))
    }

    /// `theta + perturbation`.
    pub fn perturbed(&self, eps: &Perturbation<S>) -> Result<Self> {
        self.shifted(eps, S::one())
    }

    /// In-place `theta -= rate * direction`.
    pub fn descend(&mut self, direction: &[S], rate: S) -> Result<()> {
        check_dim("ParamVector::descend", self.dim(), direction.len())?;
        for (t, &g) in self.0.iter_mut().zip(direction) {
            *t -= rate * g;
        }
        Ok(())
    }
}

impl<S: Real> GradVector<S> {
    pub fn dot(&self, other: &[S]) -> S {
        dot(&self.0, other)
    }

    /// In-place `self += other`.
    pub fn accumulate(&mut self, other: &[S]) -> Result<()> {
        check_dim("GradVector::accumulate", self.dim(), other.len())?;
        for (a, &b) in self.0.iter_mut().zip(other) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self, other: &[S]) -> Result<Self> {
        let mut out = self.clone();
        out.accumulate(other)?;
        Ok(out)
    }

    pub fn difference(&self, other: &[S]) -> Result<Self> {
        check_dim("GradVector::difference", self.dim(), other.len())?;
        Ok(Self(self.0.iter().zip(other).map(|(&a, &b)| a - b).collect()))
    }

    pub fn scaled(&self, factor: S) -> Self {
        Self(self.0.iter().map(|&v| v * factor).collect())
    }
}

pub fn dot<S: Real>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn norm2<S: Real>(a: &[S]) -> S {
    dot(a, a).sqrt()
}

pub fn norm_inf<S: Real>(a: &[S]) -> S {
    a.iter().fold(S::zero(), |m, &v| m.max(v.abs()))
}

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(shape_err(
            context,
            format!("dimension {expected}"),
            format!("dimension {actual}"),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shifted_and_descend() {
        let theta = ParamVector::new(vec![1.0, 2.0]);
        let moved = theta.shifted(&[1.0, -1.0], 0.5).unwrap();
        assert_eq!(moved.as_slice(), &[1.5, 1.5]);

        let mut p = theta.clone();
        p.descend(&[2.0, 0.0], 0.1).unwrap();
        assert_eq!(p.as_slice(), &[0.8, 2.0]);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let theta = ParamVector::new(vec![1.0, 2.0]);
        assert!(theta.shifted(&[1.0], 1.0).is_err());
        let mut g = GradVector::new(vec![0.0f64; 3]);
        assert!(g.accumulate(&[1.0]).is_err());
    }

    #[test]
    fn norms() {
        let g = GradVector::new(vec![3.0, -4.0]);
        assert_eq!(g.norm2(), 5.0);
        assert_eq!(g.norm_inf(), 4.0);
    }
}
