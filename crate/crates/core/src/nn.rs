//! Multilayer perceptrons over a flat parameter vector.
//!
//! Layout per layer `l`: the `[in_l, out_l]` weight matrix in row-major
//! order followed by the `out_l` bias vector. Layers are stored in order, so
//! `[2, 3, 1]` has `2*3 + 3 + 3*1 + 1 = 13` parameters.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{shape_err, Error, Result};
use crate::scalar::Real;
use crate::vector::{GradVector, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Head {
    /// Mean squared error on real targets.
    Regression,
    /// Softmax cross-entropy over `classes` logits.
    Classification { classes: usize },
}

/// Name of the initialization scheme, recorded in run manifests.
pub const INIT_SCHEME: &str = "uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub head: Head,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>, activation: Activation, head: Head) -> Result<Self> {
        let spec = Self {
            layer_sizes,
            activation,
            head,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::InvalidArgument(
                "an MLP needs at least an input and an output layer".into(),
            ));
        }
        if self.layer_sizes.contains(&0) {
            return Err(Error::InvalidArgument("layer sizes must be positive".into()));
        }
        let out = *self.layer_sizes.last().expect("nonempty");
        match self.head {
            Head::Regression => Ok(()),
            Head::Classification { classes } if classes < 2 => Err(Error::InvalidArgument(
                "a classification head needs at least 2 classes".into(),
            )),
            Head::Classification { classes } if classes != out => Err(Error::InvalidArgument(format!(
                "output layer has {out} units but the head has {classes} classes"
            ))),
            Head::Classification { .. } => Ok(()),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated spec")
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Stable 64-bit fingerprint used by the parameter file header.
    pub fn fingerprint(&self) -> u64 {
        let sizes: Vec<String> = self.layer_sizes.iter().map(ToString::to_string).collect();
        let head = match self.head {
            Head::Regression => "regression".to_string(),
            Head::Classification { classes } => format!("classification:{classes}"),
        };
        let canon = format!(
            "layers={};activation={:?};head={head}",
            sizes.join(","),
            self.activation
        );
        let digest = Sha256::digest(canon.as_bytes());
        let mut b = [0u8; 8];
        b.copy_from_slice(&digest[..8]);
        u64::from_le_bytes(b)
    }

    /// Appends the network to `graph` and returns the output node.
    pub fn forward<S: Real>(&self, graph: &mut Graph<'_, S>, x: NodeId) -> Result<NodeId> {
        if graph.param_count() != self.param_count() {
            return Err(shape_err(
                "MlpSpec::forward params",
                self.param_count(),
                graph.param_count(),
            ));
        }
        let cols = graph.value(x).dims2().map(|d| d.1);
        if cols != Some(self.input_dim()) {
            return Err(shape_err(
                "MlpSpec::forward input",
                format!("[n, {}]", self.input_dim()),
                format!("{:?}", graph.value(x).shape()),
            ));
        }
        let mut offset = 0;
        let mut h = x;
        let layers = self.layer_sizes.len() - 1;
        for (l, w) in self.layer_sizes.windows(2).enumerate() {
            let (din, dout) = (w[0], w[1]);
            let wn = graph.param(offset, vec![din, dout])?;
            offset += din * dout;
            let bn = graph.param(offset, vec![dout])?;
            offset += dout;
            h = graph.affine(h, wn, Some(bn))?;
            if l + 1 < layers {
                h = match self.activation {
                    Activation::Relu => graph.relu(h),
                    Activation::Tanh => graph.tanh(h),
                };
            }
        }
        Ok(h)
    }

    /// Network output for a `[n, in]` input matrix.
    pub fn predict<S: Real>(&self, params: &[S], x: &Tensor<S>) -> Result<Tensor<S>> {
        let mut g = Graph::new(params);
        let xn = g.input(x.clone());
        let out = self.forward(&mut g, xn)?;
        Ok(g.value(out).clone())
    }
}

/// Supervision attached to a batch of inputs.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets<S = f64> {
    /// `[n, out]` real targets.
    Real(Tensor<S>),
    /// Class indices, one per row.
    Classes(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch<S = f64> {
    pub inputs: Tensor<S>,
    pub targets: Targets<S>,
}

impl<S: Real> LabeledBatch<S> {
    pub fn len(&self) -> usize {
        self.inputs.dims2().map_or(0, |d| d.0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Little-endian byte image of the batch, used for episode hashing.
    pub fn write_bytes(&self, out: &mut Vec<u8>) {
        for d in self.inputs.shape() {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in self.inputs.data() {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
        match &self.targets {
            Targets::Real(t) => {
                out.push(0);
                for v in t.data() {
                    out.extend_from_slice(&v.as_f64().to_le_bytes());
                }
            }
            Targets::Classes(c) => {
                out.push(1);
                for v in c {
                    out.extend_from_slice(&(*v as u64).to_le_bytes());
                }
            }
        }
    }
}

/// Deterministic fan-in scaled uniform initialization.
pub fn init_params<S: Real>(spec: &MlpSpec, seed: u64) -> ParamVector<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(spec.param_count());
    for w in spec.layer_sizes.windows(2) {
        let bound = 1.0 / (w[0] as f64).sqrt();
        for _ in 0..(w[0] * w[1] + w[1]) {
            values.push(S::lit(rng.random_range(-bound..bound)));
        }
    }
    ParamVector::new(values)
}

fn loss_node<S: Real>(spec: &MlpSpec, g: &mut Graph<'_, S>, batch: &LabeledBatch<S>) -> Result<NodeId> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let x = g.input(batch.inputs.clone());
    let out = spec.forward(g, x)?;
    match (&batch.targets, spec.head) {
        (Targets::Real(t), Head::Regression) => {
            if t.shape() != g.value(out).shape() {
                return Err(shape_err(
                    "regression targets",
                    format!("{:?}", g.value(out).shape()),
                    format!("{:?}", t.shape()),
                ));
            }
            let tn = g.input(t.clone());
            g.mse(out, tn)
        }
        (Targets::Classes(labels), Head::Classification { .. }) => g.softmax_cross_entropy(out, labels),
        _ => Err(Error::InvalidArgument(
            "batch targets do not match the network head".into(),
        )),
    }
}

/// Loss and gradient of the network on one batch, from a single forward and
/// reverse sweep.
pub fn task_loss<S: Real>(spec: &MlpSpec, theta: &[S], batch: &LabeledBatch<S>) -> Result<(S, GradVector<S>)> {
    let mut g = Graph::new(theta);
    let root = loss_node(spec, &mut g, batch)?;
    let loss = g.value(root).item().expect("loss is scalar");
    let grad = g.backward_scalar(root)?;
    Ok((loss, grad))
}

/// Loss only (no reverse sweep).
pub fn task_loss_value<S: Real>(spec: &MlpSpec, theta: &[S], batch: &LabeledBatch<S>) -> Result<S> {
    let mut g = Graph::new(theta);
    let root = loss_node(spec, &mut g, batch)?;
    Ok(g.value(root).item().expect("loss is scalar"))
}

/// Fraction of rows whose argmax logit equals the label.
pub fn accuracy<S: Real>(spec: &MlpSpec, theta: &[S], batch: &LabeledBatch<S>) -> Result<f64> {
    let Targets::Classes(labels) = &batch.targets else {
        return Err(Error::InvalidArgument("accuracy needs class targets".into()));
    };
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let logits = spec.predict(theta, &batch.inputs)?;
    let hits = labels
        .iter()
        .enumerate()
        .filter(|(i, &l)| argmax(logits.row(*i)) == l)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

fn argmax<S: Real>(row: &[S]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Clamps every coordinate into `[-c, c]`, enforcing `||g||_inf <= c`.
pub fn clip_grad_inf<S: Real>(g: &GradVector<S>, c: S) -> GradVector<S> {
    debug_assert!(c > S::zero());
    GradVector::new(g.iter().map(|&v| v.max(-c).min(c)).collect())
}

const PARAM_MAGIC: &[u8; 8] = b"MSPARAM1";

/// Writes `magic | d (u64 LE) | spec fingerprint (u64 LE) | d x f64 LE`.
pub fn save_params<S: Real>(path: &Path, spec: &MlpSpec, params: &ParamVector<S>) -> Result<()> {
    if params.dim() != spec.param_count() {
        return Err(shape_err("save_params", spec.param_count(), params.dim()));
    }
    save_params_tagged(path, spec.fingerprint(), params)
}

/// As [`save_params`] with an explicit fingerprint, for parameter vectors
/// that do not belong to an MLP.
pub fn save_params_tagged<S: Real>(path: &Path, fingerprint: u64, params: &ParamVector<S>) -> Result<()> {
    let mut buf = Vec::with_capacity(24 + 8 * params.dim());
    buf.extend_from_slice(PARAM_MAGIC);
    buf.extend_from_slice(&(params.dim() as u64).to_le_bytes());
    buf.extend_from_slice(&fingerprint.to_le_bytes());
    for v in params.iter() {
        buf.extend_from_slice(&v.as_f64().to_le_bytes());
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

/// Reads a file written by [`save_params`]. When `spec` is given, its
/// fingerprint and dimension must match the header.
pub fn load_params<S: Real>(path: &Path, spec: Option<&MlpSpec>) -> Result<ParamVector<S>> {
    let (params, fp) = load_params_tagged(path)?;
    if let Some(spec) = spec {
        if fp != spec.fingerprint() || params.dim() != spec.param_count() {
            return Err(Error::ParamFile("header does not match the model spec".into()));
        }
    }
    Ok(params)
}

/// Reads any parameter file, returning the values and the stored fingerprint.
pub fn load_params_tagged<S: Real>(path: &Path) -> Result<(ParamVector<S>, u64)> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    if buf.len() < 24 || &buf[..8] != PARAM_MAGIC {
        return Err(Error::ParamFile("bad magic or truncated header".into()));
    }
    let d = u64::from_le_bytes(buf[8..16].try_into().expect("8 bytes")) as usize;
    let fp = u64::from_le_bytes(buf[16..24].try_into().expect("8 bytes"));
    if (buf.len() - 24) as u128 != 8 * d as u128 {
        return Err(Error::ParamFile(format!(
            "expected {} bytes of values, found {}",
            8 * d as u128,
            buf.len() - 24
        )));
    }
    let values = buf[24..]
        .chunks_exact(8)
        .map(|c| S::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
        .collect();
    Ok((ParamVector::new(values), fp))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn regression_spec(sizes: Vec<usize>) -> MlpSpec {
        MlpSpec::new(sizes, Activation::Tanh, Head::Regression).unwrap()
    }

    #[test]
    fn parameter_count() {
        assert_eq!(regression_spec(vec![2, 3, 1]).param_count(), 13);
        assert_eq!(init_params::<f64>(&regression_spec(vec![2, 3, 1]), 0).dim(), 13);
    }

    #[test]
    fn init_is_deterministic() {
        let spec = regression_spec(vec![4, 8, 2]);
        assert_eq!(init_params::<f64>(&spec, 11), init_params::<f64>(&spec, 11));
        assert_ne!(init_params::<f64>(&spec, 11), init_params::<f64>(&spec, 12));
    }

    #[test]
    fn invalid_specs() {
        assert!(MlpSpec::new(vec![3], Activation::Relu, Head::Regression).is_err());
        assert!(MlpSpec::new(vec![3, 0, 1], Activation::Relu, Head::Regression).is_err());
        assert!(MlpSpec::new(vec![3, 4], Activation::Relu, Head::Classification { classes: 5 }).is_err());
        assert!(MlpSpec::new(vec![3, 1], Activation::Relu, Head::Classification { classes: 1 }).is_err());
    }

    #[test]
    fn zero_net_zero_targets() {
        let spec = regression_spec(vec![2, 3, 1]);
        let theta = vec![0.0; 13];
        let batch = LabeledBatch {
            inputs: Tensor::matrix(2, 2, vec![1.0, 2.0, -1.0, 0.5]).unwrap(),
            targets: Targets::Real(Tensor::zeros(vec![2, 1])),
        };
        let (l, g) = task_loss(&spec, &theta, &batch).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn uniform_logits_give_ln_n() {
        let spec = MlpSpec::new(vec![3, 4, 5], Activation::Relu, Head::Classification { classes: 5 }).unwrap();
        let theta = vec![0.0; spec.param_count()];
        let batch = LabeledBatch {
            inputs: Tensor::matrix(2, 3, vec![0.1, 0.2, 0.3, 1.0, -1.0, 2.0]).unwrap(),
            targets: Targets::Classes(vec![1, 4]),
        };
        let (l, _) = task_loss(&spec, &theta, &batch).unwrap();
        assert!((l - 5f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn empty_batch_rejected() {
        let spec = regression_spec(vec![2, 1]);
        let batch = LabeledBatch {
            inputs: Tensor::zeros(vec![0, 2]),
            targets: Targets::Real(Tensor::zeros(vec![0, 1])),
        };
        assert!(matches!(task_loss(&spec, &[0.0; 3], &batch), Err(Error::EmptyBatch)));
    }

    #[test]
    fn feature_mismatch_rejected() {
        let spec = regression_spec(vec![2, 1]);
        let batch = LabeledBatch {
            inputs: Tensor::zeros(vec![1, 3]),
            targets: Targets::Real(Tensor::zeros(vec![1, 1])),
        };
        assert!(matches!(
            task_loss(&spec, &[0.0; 3], &batch),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn clip_examples() {
        let g = GradVector::new(vec![0.5, -0.5]);
        assert_eq!(clip_grad_inf(&g, 1.0), g);
        let g = GradVector::new(vec![3.0, -4.0]);
        assert_eq!(clip_grad_inf(&g, 1.0).as_slice(), &[1.0, -1.0]);
    }

    #[test]
    fn params_file_round_trip_and_header_checks() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        let spec = regression_spec(vec![2, 3, 1]);
        let theta = init_params::<f64>(&spec, 3);
        save_params(&path, &spec, &theta).unwrap();
        let back: ParamVector<f64> = load_params(&path, Some(&spec)).unwrap();
        assert_eq!(back, theta);

        let other = regression_spec(vec![2, 4, 1]);
        assert!(load_params::<f64>(&path, Some(&other)).is_err());

        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(load_params::<f64>(&path, None).is_err());
    }
}
