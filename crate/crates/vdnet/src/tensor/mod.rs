//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! [`Tensor`] is an immutable shape-tagged flat array; all differentiable
//! operations live on [`Tape`], which records what it executes and replays
//! the chain rule in reverse on [`Tape::backward`]. Everything is 64-bit:
//! desk scale makes speed a non-issue and the finite-difference test suites
//! need the precision headroom.

mod tape;

pub use tape::{GradientMap, Tape};

use crate::error::{Error, Result};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

/// Identity of a tensor value, used to key gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TensorId(u64);

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> TensorId {
    TensorId(NEXT_ID.fetch_add(1, Ordering::Relaxed))
}

/// Immutable dense tensor: row-major f64 data plus shape metadata.
///
/// Cloning is cheap (the buffer is shared). A scalar has the empty shape.
#[derive(Debug, Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    requires_grad: bool,
    id: TensorId,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert!(
            shape.iter().all(|&d| d >= 1),
            "dimension sizes must be >= 1, got {shape:?}"
        );
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not match data length {}",
            data.len()
        );
        Tensor {
            shape,
            data: Arc::new(data),
            requires_grad: false,
            id: fresh_id(),
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::new(vec![], vec![value])
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor::new(shape, vec![0.0; n])
    }

    pub fn ones(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor::new(shape, vec![1.0; n])
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let n = shape.iter().product();
        Tensor::new(shape, vec![value; n])
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(usize) -> f64) -> Self {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|i| f(i)).collect())
    }

    /// Mark this value as a differentiation target.
    pub fn requires_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub(crate) fn with_requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
    }

    pub fn id(&self) -> TensorId {
        self.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    pub fn needs_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Value of a scalar tensor.
    pub fn item(&self) -> f64 {
        assert!(self.is_scalar(), "item() on non-scalar shape {:?}", self.shape);
        self.data[0]
    }

    /// Element at a full multi-index.
    pub fn at(&self, index: &[usize]) -> f64 {
        self.data[self.flat_index(index)]
    }

    fn flat_index(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.rank(), "index rank mismatch");
        let mut flat = 0;
        for (i, (&ix, &dim)) in index.iter().zip(&self.shape).enumerate() {
            assert!(ix < dim, "index {ix} out of bounds for dim {i} of size {dim}");
            flat = flat * dim + ix;
        }
        flat
    }

    /// Elementwise map into a fresh tensor (not differentiable).
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::new(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn abs(&self) -> Tensor {
        self.map(f64::abs)
    }

    /// Sum of all elements, nested per axis.
    ///
    /// Summation is grouped hierarchically (innermost axis first), so the
    /// total of a [k,h,w] tensor is bitwise equal to first reducing each
    /// plane and then summing the per-plane totals.
    pub fn sum_value(&self) -> f64 {
        nested_sum(&self.data, &self.shape)
    }

    pub fn mean_value(&self) -> f64 {
        self.sum_value() / self.numel() as f64
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn has_nan(&self) -> bool {
        self.data.iter().any(|v| v.is_nan())
    }

    pub(crate) fn check_rank(&self, expected: usize) -> Result<()> {
        if self.rank() != expected {
            return Err(Error::Rank {
                expected,
                shape: self.shape.clone(),
            });
        }
        Ok(())
    }
}

/// Hierarchical sum: reduce the innermost axis sequentially, then reduce the
/// partial sums one axis at a time. Shared by every total-sum path in the
/// crate so that per-filter reductions and whole-tensor reductions agree
/// bitwise.
pub(crate) fn nested_sum(data: &[f64], shape: &[usize]) -> f64 {
    match shape.len() {
        0 | 1 => data.iter().sum(),
        _ => {
            let inner: usize = shape[1..].iter().product();
            data.chunks_exact(inner)
                .map(|chunk| nested_sum(chunk, &shape[1..]))
                .sum()
        }
    }
}

/// Shape of the result of broadcasting `a` against `b` under the trailing
/// dimension rule, or a shape-mismatch error naming both shapes.
pub(crate) fn broadcast_shape(
    op: &'static str,
    a: &[usize],
    b: &[usize],
) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = dim_from_trailing(a, rank, i);
        let db = dim_from_trailing(b, rank, i);
        if da == db || da == 1 || db == 1 {
            out[i] = da.max(db);
        } else {
            return Err(Error::ShapeMismatch {
                op,
                left: a.to_vec(),
                right: b.to_vec(),
            });
        }
    }
    Ok(out)
}

fn dim_from_trailing(shape: &[usize], rank: usize, i: usize) -> usize {
    let pad = rank - shape.len();
    if i < pad {
        1
    } else {
        shape[i - pad]
    }
}

/// Expand `data` of `shape` to `out_shape` by repeating broadcast axes.
pub(crate) fn broadcast_to(data: &[f64], shape: &[usize], out_shape: &[usize]) -> Vec<f64> {
    if shape == out_shape {
        return data.to_vec();
    }
    let rank = out_shape.len();
    let padded: Vec<usize> = (0..rank).map(|i| dim_from_trailing(shape, rank, i)).collect();
    let numel: usize = out_shape.iter().product();
    let mut out = vec![0.0; numel];
    let mut coords = vec![0usize; rank];
    for (flat, slot) in out.iter_mut().enumerate() {
        let mut rem = flat;
        for d in (0..rank).rev() {
            coords[d] = rem % out_shape[d];
            rem /= out_shape[d];
        }
        let mut src = 0;
        for d in 0..rank {
            let c = if padded[d] == 1 { 0 } else { coords[d] };
            src = src * padded[d] + c;
        }
        *slot = data[src];
    }
    out
}

/// Reduce a gradient of `grad_shape` back down to `target_shape` by summing
/// over the axes that were broadcast.
pub(crate) fn reduce_to_shape(grad: &[f64], grad_shape: &[usize], target_shape: &[usize]) -> Vec<f64> {
    if grad_shape == target_shape {
        return grad.to_vec();
    }
    let rank = grad_shape.len();
    let padded: Vec<usize> = (0..rank)
        .map(|i| dim_from_trailing(target_shape, rank, i))
        .collect();
    let target_numel: usize = target_shape.iter().product();
    let mut out = vec![0.0; target_numel];
    let mut coords = vec![0usize; rank];
    for (flat, &g) in grad.iter().enumerate() {
        let mut rem = flat;
        for d in (0..rank).rev() {
            coords[d] = rem % grad_shape[d];
            rem /= grad_shape[d];
        }
        let mut dst = 0;
        for d in 0..rank {
            let c = if padded[d] == 1 { 0 } else { coords[d] };
            dst = dst * padded[d] + c;
        }
        out[dst] += g;
    }
    out
}
