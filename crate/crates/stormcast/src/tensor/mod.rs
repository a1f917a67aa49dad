//! Rank-4 tensors with reverse-mode automatic differentiation.
//!
//! Everything is double precision and CPU-only. The op set is exactly what
//! the segmentation network needs (convolution, pooling, bilinear upsampling,
//! batch normalization, pointwise activations, channel concatenation, a few
//! elementwise helpers and the weighted-BCE loss); there is no broadcasting
//! beyond the convolution bias add.
//!
//! Ops are recorded on a [`Graph`] tape as they execute; [`Graph::backward`]
//! replays the tape in reverse and accumulates gradients into every reachable
//! leaf that was created with `requires_grad`.

mod graph;
pub mod gradcheck;

pub use graph::{BnStats, Graph, TensorRef};

use crate::error::{Error, Result};

/// Shape of a rank-4 tensor, `(B, C, H, W)` row-major.
///
/// Convolution weights reuse the same four slots as `(out, in, kh, kw)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub b: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(b: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { b, c, h, w }
    }

    pub fn numel(&self) -> usize {
        self.b * self.c * self.h * self.w
    }

    /// Linear index of `(b, c, y, x)`.
    #[inline]
    pub fn idx(&self, b: usize, c: usize, y: usize, x: usize) -> usize {
        ((b * self.c + c) * self.h + y) * self.w + x
    }

    /// Offset of the `(b, c)` spatial plane.
    #[inline]
    pub fn plane(&self, b: usize, c: usize) -> usize {
        (b * self.c + c) * self.h * self.w
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{},{},{},{}]", self.b, self.c, self.h, self.w)
    }
}

/// A rank-4 value array, optionally carrying a gradient of the same shape.
#[derive(Debug, Clone)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.numel()],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn full(shape: Shape, value: f64) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.numel()],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::Shape(format!(
                "tensor data length {} does not match shape {shape}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    /// Builder-style flag: mark this tensor as a differentiable leaf.
    pub fn requires_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn requires_grad_flag(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub(crate) fn grad_mut(&mut self) -> &mut Vec<f64> {
        let n = self.shape.numel();
        self.grad.get_or_insert_with(|| vec![0.0; n])
    }
}
