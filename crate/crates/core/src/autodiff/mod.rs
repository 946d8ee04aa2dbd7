//! Define-by-run reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] is built fresh for every evaluation: leaves are inputs or
//! slices of a flat parameter vector, interior nodes are drawn from a small
//! fixed op set (affine, ReLU, tanh, softmax cross-entropy, mean squared
//! error, add, scale, reduce-mean). One reverse sweep yields the gradient of
//! the root with respect to the whole parameter vector.
//!
//! ```
//! use metasharp::autodiff::{Graph, Tensor};
//!
//! let params = [3.0];
//! let mut g = Graph::new(&params);
//! let x = g.param(0, vec![]).unwrap();
//! let zero = g.input(Tensor::scalar(0.0));
//! let sq = g.mse(x, zero).unwrap(); // x^2
//! let grad = g.backward_scalar(sq).unwrap();
//! assert_eq!(grad.as_slice(), &[6.0]);
//! ```

mod fd;
mod graph;
mod tensor;

pub use fd::finite_difference_gradient;
pub use graph::{Graph, NodeId};
pub use tensor::Tensor;
