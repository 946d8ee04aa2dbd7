use crate::error::{shape_err, Error, Result};
use crate::scalar::Real;
use crate::vector::GradVector;

use super::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op<S> {
    Input,
    Param {
        offset: usize,
    },
    Affine {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    },
    Relu(NodeId),
    Tanh(NodeId),
    /// `probs` caches the row-wise softmax for the reverse sweep.
    SoftmaxCrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Vec<S>,
    },
    Mse {
        pred: NodeId,
        target: NodeId,
    },
    Add(NodeId, NodeId),
    Scale(NodeId, S),
    ReduceMean(NodeId),
}

#[derive(Debug, Clone)]
struct Node<S> {
    op: Op<S>,
    value: Tensor<S>,
}

/// Recorded computation over a borrowed flat parameter vector.
///
/// Nodes can only reference nodes created before them, so insertion order is
/// a topological order and the graph is acyclic by construction.
#[derive(Debug)]
pub struct Graph<'p, S: Real = f64> {
    params: &'p [S],
    nodes: Vec<Node<S>>,
}

impl<'p, S: Real> Graph<'p, S> {
    pub fn new(params: &'p [S]) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op<S>, value: Tensor<S>) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Tensor<S>) -> NodeId {
        self.push(Op::Input, value)
    }

    /// Leaf viewing `params[offset..offset + numel(shape)]`.
    pub fn param(&mut self, offset: usize, shape: Vec<usize>) -> Result<NodeId> {
        let numel: usize = shape.iter().product();
        let end = offset + numel;
        if end > self.params.len() {
            return Err(shape_err(
                "Graph::param",
                format!("at least {end} parameters"),
                format!("{} parameters", self.params.len()),
            ));
        }
        let value = Tensor::new(shape, self.params[offset..end].to_vec())?;
        Ok(self.push(Op::Param { offset }, value))
    }

    /// `x @ w (+ b)` with `x: [n, in]`, `w: [in, out]`, `b: [out]`.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let (n, din) = self
            .value(x)
            .dims2()
            .ok_or_else(|| shape_err("affine input", "[n, in]", format!("{:?}", self.value(x).shape())))?;
        let (win, dout) = self
            .value(w)
            .dims2()
            .ok_or_else(|| shape_err("affine weight", "[in, out]", format!("{:?}", self.value(w).shape())))?;
        if win != din {
            return Err(shape_err(
                "affine",
                format!("weight rows {din}"),
                format!("weight rows {win}"),
            ));
        }
        if let Some(b) = b {
            if self.value(b).numel() != dout {
                return Err(shape_err(
                    "affine bias",
                    format!("{dout} values"),
                    self.value(b).numel(),
                ));
            }
        }
        let xs = self.value(x).data();
        let ws = self.value(w).data();
        let mut out = vec![S::zero(); n * dout];
        for i in 0..n {
            let row = &mut out[i * dout..(i + 1) * dout];
            if let Some(b) = b {
                row.copy_from_slice(self.value(b).data());
            }
            for k in 0..din {
                let xik = xs[i * din + k];
                if xik == S::zero() {
                    continue;
                }
                let wrow = &ws[k * dout..(k + 1) * dout];
                for (o, &wkj) in row.iter_mut().zip(wrow) {
                    *o += xik * wkj;
                }
            }
        }
        let value = Tensor::matrix(n, dout, out)?;
        Ok(self.push(Op::Affine { x, w, b }, value))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(|a| a.max(S::zero()));
        self.push(Op::Relu(x), v)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(S::tanh);
        self.push(Op::Tanh(x), v)
    }

    /// Mean over rows of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let lv = self.value(logits);
        let (n, c) = lv
            .dims2()
            .ok_or_else(|| shape_err("softmax_cross_entropy", "[n, classes]", format!("{:?}", lv.shape())))?;
        if labels.len() != n {
            return Err(shape_err("softmax_cross_entropy labels", n, labels.len()));
        }
        if n == 0 {
            return Err(Error::EmptyBatch);
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {c} classes"
            )));
        }
        let mut probs = vec![S::zero(); n * c];
        let mut total = S::zero();
        for (i, &label) in labels.iter().enumerate() {
            let row = lv.row(i);
            let m = row.iter().fold(S::neg_infinity(), |a, &b| a.max(b));
            let mut z = S::zero();
            for (p, &v) in probs[i * c..(i + 1) * c].iter_mut().zip(row) {
                *p = (v - m).exp();
                z += *p;
            }
            for p in &mut probs[i * c..(i + 1) * c] {
                *p /= z;
            }
            total += z.ln() + m - row[label];
        }
        let loss = total / S::from_usize_lossy(n);
        Ok(self.push(
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            Tensor::scalar(loss),
        ))
    }

    /// Mean over all elements of `(pred - target)^2`.
    pub fn mse(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.numel() != t.numel() {
            return Err(shape_err("mse", format!("{:?}", p.shape()), format!("{:?}", t.shape())));
        }
        if p.numel() == 0 {
            return Err(Error::EmptyBatch);
        }
        let sum: S = p.data().iter().zip(t.data()).map(|(&a, &b)| (a - b) * (a - b)).sum();
        let loss = sum / S::from_usize_lossy(p.numel());
        Ok(self.push(Op::Mse { pred, target }, Tensor::scalar(loss)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.numel() != vb.numel() {
            return Err(shape_err(
                "add",
                format!("{:?}", va.shape()),
                format!("{:?}", vb.shape()),
            ));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let v = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn scale(&mut self, a: NodeId, factor: S) -> NodeId {
        let v = self.value(a).map(|x| x * factor);
        self.push(Op::Scale(a, factor), v)
    }

    pub fn reduce_mean(&mut self, a: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        if va.numel() == 0 {
            return Err(Error::EmptyBatch);
        }
        let mean = va.data().iter().copied().sum::<S>() / S::from_usize_lossy(va.numel());
        Ok(self.push(Op::ReduceMean(a), Tensor::scalar(mean)))
    }

    /// Reverse sweep from a scalar root seeded with 1.
    pub fn backward_scalar(&self, root: NodeId) -> Result<GradVector<S>> {
        self.backward(root, &Tensor::scalar(S::one()))
    }

    /// Reverse sweep from `root` with cotangent `seed`; returns the gradient
    /// with respect to every entry of the parameter vector.
    pub fn backward(&self, root: NodeId, seed: &Tensor<S>) -> Result<GradVector<S>> {
        let rv = self.value(root);
        let compatible = if rv.numel() == 1 {
            seed.numel() == 1
        } else {
            seed.shape() == rv.shape()
        };
        if !compatible {
            return Err(shape_err(
                "backward seed",
                format!("{:?}", rv.shape()),
                format!("{:?}", seed.shape()),
            ));
        }

        let mut grad = vec![S::zero(); self.params.len()];
        let mut adj: Vec<Option<Vec<S>>> = vec![None; root.0 + 1];
        adj[root.0] = Some(seed.data().to_vec());

        for idx in (0..=root.0).rev() {
            let Some(d) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param { offset } => {
                    for (g, v) in grad[*offset..*offset + d.len()].iter_mut().zip(&d) {
                        *g += *v;
                    }
                }
                Op::Affine { x, w, b } => {
                    let (n, din) = self.value(*x).dims2().expect("checked in forward");
                    let dout = node.value.dims2().expect("affine output is 2-D").1;
                    let xs = self.value(*x).data();
                    let ws = self.value(*w).data();
                    let mut dx = vec![S::zero(); n * din];
                    let mut dw = vec![S::zero(); din * dout];
                    for i in 0..n {
                        let drow = &d[i * dout..(i + 1) * dout];
                        for k in 0..din {
                            let wrow = &ws[k * dout..(k + 1) * dout];
                            let mut acc = S::zero();
                            for (&dv, &wv) in drow.iter().zip(wrow) {
                                acc += dv * wv;
                            }
                            dx[i * din + k] = acc;
                            let xik = xs[i * din + k];
                            if xik != S::zero() {
                                for (g, &dv) in dw[k * dout..(k + 1) * dout].iter_mut().zip(drow) {
                                    *g += xik * dv;
                                }
                            }
                        }
                    }
                    accumulate(&mut adj, *x, dx);
                    accumulate(&mut adj, *w, dw);
                    if let Some(b) = b {
                        let mut db = vec![S::zero(); dout];
                        for i in 0..n {
                            for (g, &dv) in db.iter_mut().zip(&d[i * dout..(i + 1) * dout]) {
                                *g += dv;
                            }
                        }
                        accumulate(&mut adj, *b, db);
                    }
                }
                Op::Relu(x) => {
                    let xv = self.value(*x).data();
                    let dx = d
                        .iter()
                        .zip(xv)
                        .map(|(&g, &v)| if v > S::zero() { g } else { S::zero() })
                        .collect();
                    accumulate(&mut adj, *x, dx);
                }
                Op::Tanh(x) => {
                    let y = node.value.data();
                    let dx = d.iter().zip(y).map(|(&g, &t)| g * (S::one() - t * t)).collect();
                    accumulate(&mut adj, *x, dx);
                }
                Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                    let n = labels.len();
                    let c = probs.len() / n;
                    let scale = d[0] / S::from_usize_lossy(n);
                    let mut dl: Vec<S> = probs.iter().map(|&p| p * scale).collect();
                    for (i, &l) in labels.iter().enumerate() {
                        dl[i * c + l] -= scale;
                    }
                    accumulate(&mut adj, *logits, dl);
                }
                Op::Mse { pred, target } => {
                    let p = self.value(*pred).data();
                    let t = self.value(*target).data();
                    let scale = S::lit(2.0) * d[0] / S::from_usize_lossy(p.len());
                    let dp: Vec<S> = p.iter().zip(t).map(|(&a, &b)| (a - b) * scale).collect();
                    let dt = dp.iter().map(|&v| -v).collect();
                    accumulate(&mut adj, *pred, dp);
                    accumulate(&mut adj, *target, dt);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, d.clone());
                    accumulate(&mut adj, *b, d);
                }
                Op::Scale(a, f) => {
                    let da = d.iter().map(|&v| v * *f).collect();
                    accumulate(&mut adj, *a, da);
                }
                Op::ReduceMean(a) => {
                    let n = self.value(*a).numel();
                    let v = d[0] / S::from_usize_lossy(n);
                    accumulate(&mut adj, *a, vec![v; n]);
                }
            }
        }
        Ok(GradVector::new(grad))
    }
}

fn accumulate<S: Real>(adj: &mut [Option<Vec<S>>], id: NodeId, delta: Vec<S>) {
    match &mut adj[id.0] {
        Some(existing) => {
            for (e, v) in existing.iter_mut().zip(delta) {
                *e += v;
            }
        }
        slot @ None => *slot = Some(delta),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_graph_echoes_input() {
        let params: [f64; 0] = [];
        let mut g = Graph::new(&params);
        let x = g.input(Tensor::matrix(1, 2, vec![2.0, 3.0]).unwrap());
        assert_eq!(g.value(x).data(), &[2.0, 3.0]);
    }

    #[test]
    fn zero_affine_gives_zero() {
        let params = [0.0; 6];
        let mut g = Graph::new(&params);
        let x = g.input(Tensor::matrix(1, 2, vec![5.0, -7.0]).unwrap());
        let w = g.param(0, vec![2, 2]).unwrap();
        let b = g.param(4, vec![2]).unwrap();
        let y = g.affine(x, w, Some(b)).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0]);
    }

    #[test]
    fn square_chain_rule() {
        let params = [3.0];
        let mut g = Graph::new(&params);
        let x = g.param(0, vec![]).unwrap();
        let z = g.input(Tensor::scalar(0.0));
        let sq = g.mse(x, z).unwrap();
        assert_eq!(g.value(sq).item(), Some(9.0));
        assert_eq!(g.backward_scalar(sq).unwrap().as_slice(), &[6.0]);
    }

    #[test]
    fn linear_gradient_is_input() {
        let params = [0.0, 0.0];
        let mut g = Graph::new(&params);
        let x = g.input(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        let w = g.param(0, vec![2, 1]).unwrap();
        let y = g.affine(x, w, None).unwrap();
        let grad = g.backward(y, &Tensor::matrix(1, 1, vec![1.0]).unwrap()).unwrap();
        assert_eq!(grad.as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn non_scalar_root_rejects_mismatched_seed() {
        let params = [0.0; 4];
        let mut g = Graph::new(&params);
        let x = g.input(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        let w = g.param(0, vec![2, 2]).unwrap();
        let y = g.affine(x, w, None).unwrap();
        assert!(g.backward(y, &Tensor::scalar(1.0)).is_err());
        assert!(g.backward(y, &Tensor::matrix(2, 1, vec![1.0, 1.0]).unwrap()).is_err());
    }

    #[test]
    fn affine_shape_mismatch_reported() {
        let params = [0.0; 6];
        let mut g = Graph::new(&params);
        let x = g.input(Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]).unwrap());
        let w = g.param(0, vec![2, 3]).unwrap();
        let err = g.affine(x, w, None).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
    }

    #[test]
    fn param_out_of_range() {
        let params = [0.0; 2];
        let mut g = Graph::<f64>::new(&params);
        assert!(g.param(1, vec![2]).is_err());
    }

    #[test]
    fn uniform_logits_cross_entropy_is_ln_n() {
        let params: [f64; 0] = [];
        let mut g = Graph::new(&params);
        let logits = g.input(Tensor::zeros(vec![3, 5]));
        let ce = g.softmax_cross_entropy(logits, &[0, 4, 2]).unwrap();
        assert!((g.value(ce).item().unwrap() - 5f64.ln()).abs() < 1e-15);
    }
}
