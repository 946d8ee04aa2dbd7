//! Few-shot task distributions: synthetic sinusoid regression, Gaussian blob
//! classification, quadratic task families, and N-way K-shot episodes drawn
//! from IDX datasets.
//!
//! Every generator is a pure function of its spec and seed. Independent
//! streams are derived from one master seed with ChaCha stream ids, so
//! episodes can be sampled concurrently without coordination.

mod dataset;
mod idx;
mod synthetic;

use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::meta::{Split, Task};
use crate::nn::{accuracy, task_loss, task_loss_value, LabeledBatch, MlpSpec};
use crate::objective::{Objective, Quadratic};
use crate::scalar::Real;
use crate::vector::GradVector;

pub use dataset::{episodes_from_dataset, mean_pool, pooled_side, Dataset, EpisodeStream, MAX_POOLED_FEATURES};
pub use idx::{encode_idx, load_idx, parse_idx, write_idx, IdxArray, IdxType};
pub use synthetic::{blob_classification_task, sinusoid_task, BlobFamily, QuadraticFamily, SinusoidFamily};

/// N-way K-shot episode shape plus its seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeSpec {
    pub n_way: usize,
    pub k_shot: usize,
    /// Query examples per class.
    pub q_query: usize,
    pub seed: u64,
}

impl EpisodeSpec {
    pub fn new(n_way: usize, k_shot: usize, q_query: usize, seed: u64) -> Result<Self> {
        let s = Self {
            n_way,
            k_shot,
            q_query,
            seed,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_way < 2 {
            return Err(Error::InvalidArgument(format!(
                "n_way = {} (need at least 2)",
                self.n_way
            )));
        }
        if self.k_shot == 0 || self.q_query == 0 {
            return Err(Error::InvalidArgument("k_shot and q_query must be at least 1".into()));
        }
        Ok(())
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

/// What generated a task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TaskDescriptor {
    Sinusoid {
        amplitude: f64,
        phase: f64,
    },
    Blobs {
        centers: Vec<Vec<f64>>,
    },
    /// Original dataset class ids, in remapped-label order.
    Dataset {
        classes: Vec<usize>,
    },
}

/// One task: support set (`D_train`), query set (`D_val`) and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskBatch<S = f64> {
    pub support: LabeledBatch<S>,
    pub query: LabeledBatch<S>,
    pub descriptor: TaskDescriptor,
}

impl<S: Real> TaskBatch<S> {
    pub fn new(support: LabeledBatch<S>, query: LabeledBatch<S>, descriptor: TaskDescriptor) -> Result<Self> {
        if support.is_empty() || query.is_empty() {
            return Err(Error::EmptyBatch);
        }
        Ok(Self {
            support,
            query,
            descriptor,
        })
    }

    pub fn split(&self, split: Split) -> &LabeledBatch<S> {
        match split {
            Split::Support => &self.support,
            Split::Query => &self.query,
        }
    }
}

/// Running SHA-256 over the byte images of a task stream.
#[derive(Debug, Clone, Default)]
pub struct StreamDigest(Sha256);

impl StreamDigest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update<S: Real>(&mut self, task: &TaskBatch<S>) {
        let mut buf = Vec::new();
        task.support.write_bytes(&mut buf);
        task.query.write_bytes(&mut buf);
        self.0.update(&buf);
    }

    /// Feeds raw bytes, for tasks that are not example sets.
    pub fn update_raw(&mut self, bytes: &[u8]) {
        self.0.update(bytes);
    }

    pub fn hex(&self) -> String {
        self.0.clone().finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Hex digest of a single task.
pub fn episode_hash<S: Real>(task: &TaskBatch<S>) -> String {
    let mut d = StreamDigest::new();
    d.update(task);
    d.hex()
}

/// Deterministic RNG for sub-stream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Child seed number `index` of `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    stream_rng(seed, index).next_u64()
}

/// An MLP task: the network spec plus one [`TaskBatch`].
#[derive(Debug, Clone)]
pub struct MlpTask<S = f64> {
    pub spec: Arc<MlpSpec>,
    pub batch: TaskBatch<S>,
}

impl<S: Real> Task<S> for MlpTask<S> {
    fn loss_grad(&self, split: Split, theta: &[S]) -> Result<(S, GradVector<S>)> {
        task_loss(&self.spec, theta, self.batch.split(split))
    }

    fn loss(&self, split: Split, theta: &[S]) -> Result<S> {
        task_loss_value(&self.spec, theta, self.batch.split(split))
    }

    fn query_accuracy(&self, theta: &[S]) -> Option<Result<f64>> {
        match self.spec.head {
            crate::nn::Head::Classification { .. } => Some(accuracy(&self.spec, theta, &self.batch.query)),
            crate::nn::Head::Regression => None,
        }
    }
}

/// A task whose support and query losses are quadratics.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticTask<S = f64> {
    pub support: Quadratic<S>,
    pub query: Quadratic<S>,
}

impl<S: Real> QuadraticTask<S> {
    /// Same quadratic on both splits.
    pub fn shared(q: Quadratic<S>) -> Self {
        Self {
            support: q.clone(),
            query: q,
        }
    }
}

impl<S: Real> Task<S> for QuadraticTask<S> {
    fn loss_grad(&self, split: Split, theta: &[S]) -> Result<(S, GradVector<S>)> {
        match split {
            Split::Support => self.support.loss_grad(theta),
            Split::Query => self.query.loss_grad(theta),
        }
    }
}
