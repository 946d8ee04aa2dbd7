use std::collections::BTreeMap;
use std::marker::PhantomData;
use std::path::Path;
use std::sync::Arc;

use rand::seq::index::sample;

use super::idx::load_idx;
use super::{stream_rng, EpisodeSpec, TaskBatch, TaskDescriptor};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::nn::{LabeledBatch, Targets};
use crate::scalar::Real;

/// Images are mean-pooled until they have at most this many features.
pub const MAX_POOLED_FEATURES: usize = 196;

/// Flattened examples with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `[n, features]`, values in `[0, 1]`.
    pub features: Tensor<f64>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(features: Tensor<f64>, labels: Vec<usize>) -> Result<Self> {
        let (n, _) = features
            .dims2()
            .ok_or_else(|| Error::InvalidArgument("dataset features must be a matrix".into()))?;
        if n != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{n} examples but {} labels",
                labels.len()
            )));
        }
        Ok(Self { features, labels })
    }

    /// Loads an image file (`[n, h, w]` or `[n, f]`) and a label file (`[n]`),
    /// mean-pooling images down to at most [`MAX_POOLED_FEATURES`] features.
    pub fn from_idx(images: &Path, labels: &Path) -> Result<Self> {
        let img = load_idx(images)?;
        let lab = load_idx(labels)?;
        if lab.dims.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "label file must be 1-D, got dims {:?}",
                lab.dims
            )));
        }
        if let Some(v) = lab.values.iter().find(|&&v| v < 0) {
            return Err(Error::InvalidArgument(format!("negative label {v}")));
        }
        let n = *img.dims.first().unwrap_or(&0);
        let scaled = img.scaled();
        let features = match img.dims.as_slice() {
            [_, h, w] => {
                let (h, w) = (*h, *w);
                let p = pooled_side(h, w);
                let per: Vec<Vec<f64>> = scaled.chunks(h * w).map(|im| mean_pool(im, h, w, p)).collect();
                let f = per.first().map_or(0, Vec::len);
                Tensor::matrix(n, f, per.concat())?
            }
            [_, f] => Tensor::matrix(n, *f, scaled)?,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "image file must be 2-D or 3-D, got dims {other:?}"
                )))
            }
        };
        Self::new(features, lab.values.iter().map(|&v| v as usize).collect())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.dims2().map_or(0, |d| d.1)
    }
}

/// Smallest pooling window `p` with `ceil(h/p) * ceil(w/p) <= 196`.
pub fn pooled_side(h: usize, w: usize) -> usize {
    let mut p = 1;
    while h.div_ceil(p) * w.div_ceil(p) > MAX_POOLED_FEATURES {
        p += 1;
    }
    p
}

/// Averages `p x p` blocks of a row-major `h x w` image; edge blocks average
/// the pixels they cover.
pub fn mean_pool(image: &[f64], h: usize, w: usize, p: usize) -> Vec<f64> {
    let (oh, ow) = (h.div_ceil(p), w.div_ceil(p));
    let mut out = Vec::with_capacity(oh * ow);
    for bi in 0..oh {
        for bj in 0..ow {
            let (mut s, mut n) = (0.0, 0usize);
            for i in bi * p..((bi + 1) * p).min(h) {
                for j in bj * p..((bj + 1) * p).min(w) {
                    s += image[i * w + j];
                    n += 1;
                }
            }
            out.push(s / n as f64);
        }
    }
    out
}

/// Seeded N-way K-shot episodes over a [`Dataset`]. Episode `i` depends only
/// on `(spec, i)`, so [`EpisodeStream::episode`] can be called from any thread.
#[derive(Debug, Clone)]
pub struct EpisodeStream<S = f64> {
    data: Arc<Dataset>,
    spec: EpisodeSpec,
    /// Classes with at least `K + Q` examples, ascending, with their rows.
    classes: Vec<(usize, Vec<usize>)>,
    next: u64,
    _scalar: PhantomData<S>,
}

/// Validates that `spec` is satisfiable and returns the episode stream.
pub fn episodes_from_dataset<S: Real>(data: Arc<Dataset>, spec: EpisodeSpec) -> Result<EpisodeStream<S>> {
    spec.validate()?;
    let need = spec.k_shot + spec.q_query;
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (row, &c) in data.labels.iter().enumerate() {
        by_class.entry(c).or_default().push(row);
    }
    let (classes, short): (Vec<_>, Vec<_>) = by_class.into_iter().partition(|(_, rows)| rows.len() >= need);
    if classes.len() < spec.n_way {
        return Err(match short.first() {
            Some((c, rows)) => Error::InsufficientExamples {
                class: *c,
                available: rows.len(),
                required: need,
            },
            None => Error::InvalidArgument(format!(
                "dataset has {} classes, episodes need {}",
                classes.len(),
                spec.n_way
            )),
        });
    }
    Ok(EpisodeStream {
        data,
        spec,
        classes,
        next: 0,
        _scalar: PhantomData,
    })
}

impl<S: Real> EpisodeStream<S> {
    pub fn episode(&self, index: u64) -> TaskBatch<S> {
        let spec = &self.spec;
        let mut rng = stream_rng(spec.seed, 16 + index);
        let picked: Vec<usize> = sample(&mut rng, self.classes.len(), spec.n_way).into_vec();
        let f = self.data.feature_dim();
        let mut sx = Vec::with_capacity(spec.n_way * spec.k_shot * f);
        let mut qx = Vec::with_capacity(spec.n_way * spec.q_query * f);
        let (mut sy, mut qy) = (Vec::new(), Vec::new());
        for (label, &ci) in picked.iter().enumerate() {
            let rows = &self.classes[ci].1;
            let chosen = sample(&mut rng, rows.len(), spec.k_shot + spec.q_query).into_vec();
            for (j, &r) in chosen.iter().enumerate() {
                let x = self.data.features.row(rows[r]).iter().map(|&v| S::lit(v));
                if j < spec.k_shot {
                    sx.extend(x);
                    sy.push(label);
                } else {
                    qx.extend(x);
                    qy.push(label);
                }
            }
        }
        let batch = |x: Vec<S>, y: Vec<usize>| LabeledBatch {
            inputs: Tensor::matrix(y.len(), f, x).expect("rows x features"),
            targets: Targets::Classes(y),
        };
        TaskBatch {
            support: batch(sx, sy),
            query: batch(qx, qy),
            descriptor: TaskDescriptor::Dataset {
                classes: picked.iter().map(|&ci| self.classes[ci].0).collect(),
            },
        }
    }

    pub fn spec(&self) -> &EpisodeSpec {
        &self.spec
    }
}

impl<S: Real> Iterator for EpisodeStream<S> {
    type Item = TaskBatch<S>;

    fn next(&mut self) -> Option<TaskBatch<S>> {
        let e = self.episode(self.next);
        self.next += 1;
        Some(e)
    }
}
