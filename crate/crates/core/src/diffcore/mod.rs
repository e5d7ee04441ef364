//! Differentiable tensor engine: static graphs, forward evaluation, exact
//! reverse-mode gradients, and Hessian-vector products.

mod checkpoint;
mod engine;
mod graph;
pub(crate) mod kernels;
mod params;
mod scalar;
mod tensor;

pub use checkpoint::{read_checkpoint, read_checkpoint_dtype, write_checkpoint, CHECKPOINT_MAGIC};
pub use engine::{
    finite_diff_gradient, forward, forward_node, gradient, gradient_and_hvp,
    hessian_vector_product, Mode,
};
pub use graph::{Graph, Node, NodeId, Op};
pub use params::{GradSet, ParamSet};
pub use scalar::{DType, Dual, Element, Scalar};
pub use tensor::{numel, Tensor};

/// Normwise relative error `‖a − b‖∞ / max(‖b‖∞, floor)`.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(floor);
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
        / scale
}
