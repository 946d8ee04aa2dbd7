use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{stream_rng, EpisodeSpec, QuadraticTask, TaskBatch, TaskDescriptor};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::nn::{LabeledBatch, Targets};
use crate::objective::Quadratic;
use crate::scalar::Real;

/// `y = A sin(x + phi)` regression tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SinusoidFamily {
    pub k_support: usize,
    pub q_query: usize,
    pub amplitude: (f64, f64),
    pub phase: (f64, f64),
    pub x_range: (f64, f64),
}

impl Default for SinusoidFamily {
    fn default() -> Self {
        Self {
            k_support: 10,
            q_query: 10,
            amplitude: (0.1, 5.0),
            phase: (0.0, PI),
            x_range: (-5.0, 5.0),
        }
    }
}

impl SinusoidFamily {
    pub fn value(amplitude: f64, phase: f64, x: f64) -> f64 {
        amplitude * (x + phase).sin()
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_support == 0 || self.q_query == 0 {
            return Err(Error::InvalidArgument(
                "sinusoid k_support and q_query must be at least 1".into(),
            ));
        }
        for (name, (lo, hi)) in [
            ("amplitude", self.amplitude),
            ("phase", self.phase),
            ("x_range", self.x_range),
        ] {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "sinusoid {name} range [{lo}, {hi}] is invalid"
                )));
            }
        }
        Ok(())
    }

    pub fn task<S: Real>(&self, seed: u64) -> TaskBatch<S> {
        let mut rng = stream_rng(seed, 0);
        let amplitude = uniform(&mut rng, self.amplitude);
        let phase = uniform(&mut rng, self.phase);
        let mut draw = |n: usize| {
            let xs: Vec<f64> = (0..n).map(|_| uniform(&mut rng, self.x_range)).collect();
            let ys: Vec<S> = xs.iter().map(|&x| S::lit(Self::value(amplitude, phase, x))).collect();
            LabeledBatch {
                inputs: Tensor::matrix(n, 1, xs.into_iter().map(S::lit).collect()).expect("n x 1"),
                targets: Targets::Real(Tensor::matrix(n, 1, ys).expect("n x 1")),
            }
        };
        let support = draw(self.k_support);
        let query = draw(self.q_query);
        TaskBatch {
            support,
            query,
            descriptor: TaskDescriptor::Sinusoid { amplitude, phase },
        }
    }
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// A sinusoid task from the default family.
pub fn sinusoid_task<S: Real>(seed: u64) -> TaskBatch<S> {
    SinusoidFamily::default().task(seed)
}

/// Isotropic Gaussian clusters with well-separated random centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobFamily {
    pub dim: usize,
    /// Minimum pairwise distance between centers.
    pub separation: f64,
    #[serde(default = "one")]
    pub noise_std: f64,
    /// Centers are drawn from `[-w, w]^dim`; defaults to
    /// `separation * n_way^(1/dim)`.
    #[serde(default)]
    pub half_width: Option<f64>,
    #[serde(default = "default_attempts")]
    pub max_attempts: usize,
}

fn one() -> f64 {
    1.0
}

fn default_attempts() -> usize {
    10_000
}

impl BlobFamily {
    pub fn new(dim: usize, separation: f64) -> Self {
        Self {
            dim,
            separation,
            noise_std: 1.0,
            half_width: None,
            max_attempts: default_attempts(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidArgument("blob dim must be at least 1".into()));
        }
        if !(self.separation > 0.0) || !self.separation.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "blob separation = {} must be positive",
                self.separation
            )));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::InvalidArgument("blob noise_std must be nonnegative".into()));
        }
        Ok(())
    }

    fn centers<R: Rng>(&self, rng: &mut R, n: usize) -> Result<Vec<Vec<f64>>> {
        let w = self
            .half_width
            .unwrap_or_else(|| self.separation * (n as f64).powf(1.0 / self.dim as f64));
        let mut centers: Vec<Vec<f64>> = Vec::with_capacity(n);
        let mut attempts = 0;
        while centers.len() < n {
            if attempts >= self.max_attempts {
                return Err(Error::Infeasible(format!(
                    "could not place {n} centers at separation {} in [-{w}, {w}]^{} after {attempts} draws",
                    self.separation, self.dim
                )));
            }
            attempts += 1;
            let c: Vec<f64> = (0..self.dim).map(|_| uniform(rng, (-w, w))).collect();
            let ok = centers.iter().all(|o| {
                let d2: f64 = o.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum();
                d2.sqrt() >= self.separation
            });
            if ok {
                centers.push(c);
            }
        }
        Ok(centers)
    }

    /// One episode: K support and Q query points per class, class-major order.
    pub fn episode<S: Real>(&self, spec: &EpisodeSpec) -> Result<TaskBatch<S>> {
        self.validate()?;
        spec.validate()?;
        let mut rng = stream_rng(spec.seed, 1);
        let centers = self.centers(&mut rng, spec.n_way)?;
        let noise = Normal::new(0.0, self.noise_std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut draw = |per_class: usize| {
            let mut xs = Vec::with_capacity(spec.n_way * per_class * self.dim);
            let mut labels = Vec::with_capacity(spec.n_way * per_class);
            for (class, c) in centers.iter().enumerate() {
                for _ in 0..per_class {
                    xs.extend(c.iter().map(|&m| S::lit(m + noise.sample(&mut rng))));
                    labels.push(class);
                }
            }
            LabeledBatch {
                inputs: Tensor::matrix(labels.len(), self.dim, xs).expect("rows x dim"),
                targets: Targets::Classes(labels),
            }
        };
        let support = draw(spec.k_shot);
        let query = draw(spec.q_query);
        Ok(TaskBatch {
            support,
            query,
            descriptor: TaskDescriptor::Blobs { centers },
        })
    }
}

/// One blob episode with unit noise and the default center box.
pub fn blob_classification_task<S: Real>(spec: &EpisodeSpec, dim: usize, separation: f64) -> Result<TaskBatch<S>> {
    BlobFamily::new(dim, separation).episode(spec)
}

/// Diagonal quadratic tasks `1/2 sum_i a_i (theta_i - c_i)^2` with
/// curvatures `a_i ~ scale * U[curvature_low, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticFamily {
    pub dim: usize,
    pub scale: f64,
    #[serde(default = "default_low")]
    pub curvature_low: f64,
    /// Standard deviation of the support and query centers around 0.
    #[serde(default)]
    pub center_std: f64,
}

fn default_low() -> f64 {
    0.5
}

impl QuadraticFamily {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidArgument("quadratic dim must be at least 1".into()));
        }
        if !(self.scale > 0.0) || !(self.curvature_low > 0.0 && self.curvature_low <= 1.0) {
            return Err(Error::InvalidArgument(
                "quadratic scale must be positive and curvature_low in (0, 1]".into(),
            ));
        }
        if !(self.center_std >= 0.0) {
            return Err(Error::InvalidArgument(
                "quadratic center_std must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    pub fn task<S: Real>(&self, seed: u64) -> QuadraticTask<S> {
        let mut rng = stream_rng(seed, 2);
        let diag: Vec<S> = (0..self.dim)
            .map(|_| S::lit(self.scale * uniform(&mut rng, (self.curvature_low, 1.0))))
            .collect();
        let normal = Normal::new(0.0, self.center_std.max(0.0)).expect("finite std");
        let mut center = || -> Vec<S> { (0..self.dim).map(|_| S::lit(normal.sample(&mut rng))).collect() };
        let cs = center();
        let cq = center();
        QuadraticTask {
            support: Quadratic::diagonal(&diag, cs).expect("dims agree"),
            query: Quadratic::diagonal(&diag, cq).expect("dims agree"),
        }
    }
}
