//! Dense row-major N-dimensional arrays.
//!
//! Every array-valued quantity in the crate (activations, kernels, gradients,
//! volumes) is a [`Tensor`]. The layout is fixed: row-major, contiguous, with
//! strides fully determined by the shape. Kernels that need raw speed index
//! the backing slice directly through [`Shape::offset`].

use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest supported rank: batch, channel, depth, height, width.
pub const MAX_RANK: usize = 5;

/// Floating point element type. Implemented for `f32` (training) and `f64`
/// (gradient checks and oracles).
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + Default
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal into this precision.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("real converts to f64")
    }

    /// `c = alpha * a b + beta * c` over raw strided storage.
    ///
    /// # Safety
    /// Every index reachable through the given extents and strides must lie
    /// inside the corresponding allocation.
    #[allow(clippy::too_many_arguments)]
    #[doc(hidden)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Real for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Storage order of a GEMM operand held in a row-major slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatLayout {
    /// The slice holds the `[rows, cols]` matrix itself.
    Plain,
    /// The slice holds the `[cols, rows]` matrix; the operand is its transpose.
    Transposed,
}

impl MatLayout {
    fn strides(self, rows: usize, cols: usize) -> (isize, isize) {
        match self {
            MatLayout::Plain => (cols as isize, 1),
            MatLayout::Transposed => (1, rows as isize),
        }
    }
}

/// `c[m, n] = a[m, k] b[k, n] (+ c if accumulate)`, every operand row-major.
///
/// Accumulation order is fixed for given extents, so results are reproducible.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_layout: MatLayout,
    b: &[T],
    b_layout: MatLayout,
    c: &mut [T],
    accumulate: bool,
) {
    let (rsa, csa) = a_layout.strides(m, k);
    let (rsb, csb) = b_layout.strides(k, n);
    gemm_strided(m, k, n, (a, rsa, csa), (b, rsb, csb), (c, n as isize), accumulate);
}

fn last_index(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
    ((rows as isize - 1) * rs + (cols as isize - 1) * cs) as usize
}

/// General strided product. Operands are `(slice, row stride, column stride)`;
/// the output is `(slice, row stride)` with unit column stride.
pub fn gemm_strided<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: (&[T], isize, isize),
    b: (&[T], isize, isize),
    c: (&mut [T], isize),
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(a.1 >= 0 && a.2 >= 0 && b.1 >= 0 && b.2 >= 0 && c.1 >= 0, "negative stride");
    if k > 0 {
        assert!(last_index(m, k, a.1, a.2) < a.0.len(), "gemm lhs out of bounds");
        assert!(last_index(k, n, b.1, b.2) < b.0.len(), "gemm rhs out of bounds");
    }
    assert!(last_index(m, n, c.1, 1) < c.0.len(), "gemm output out of bounds");
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: every reachable index was bounds-checked above.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.0.as_ptr(),
            a.1,
            a.2,
            b.0.as_ptr(),
            b.1,
            b.2,
            beta,
            c.0.as_mut_ptr(),
            c.1,
            1,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("matmul inner dimension mismatch: {left:?} x {right:?}")]
    InnerDimMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("matmul expects rank-2 operands, got {left:?} and {right:?}")]
    NotMatrix { left: Vec<usize>, right: Vec<usize> },
    #[error("window out of bounds on axis {axis}: origin {origin} + size {size} > extent {extent}")]
    OutOfBounds {
        axis: usize,
        origin: usize,
        size: usize,
        extent: usize,
    },
    #[error("window rank {got} does not match tensor rank {rank}")]
    WindowRank { got: usize, rank: usize },
    #[error("axis {axis} out of range for rank {rank}")]
    AxisOutOfRange { axis: usize, rank: usize },
    #[error("invalid shape {shape:?}: extents must be >= 1 and rank in 1..={MAX_RANK}")]
    InvalidShape { shape: Vec<usize> },
    #[error("data length {len} does not match shape {shape:?} (expects {expected})")]
    DataLength {
        shape: Vec<usize>,
        len: usize,
        expected: usize,
    },
}

/// Extents of a tensor, outermost axis first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: &[usize]) -> Result<Self, TensorError> {
        if dims.is_empty() || dims.len() > MAX_RANK || dims.contains(&0) {
            return Err(TensorError::InvalidShape {
                shape: dims.to_vec(),
            });
        }
        Ok(Shape(dims.to_vec()))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Row-major strides.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.0.len()];
        for axis in (0..self.0.len().saturating_sub(1)).rev() {
            strides[axis] = strides[axis + 1] * self.0[axis + 1];
        }
        strides
    }

    /// The single offset formula shared by every kernel in the crate.
    #[inline]
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.0.len());
        index
            .iter()
            .zip(&self.0)
            .fold(0, |acc, (&i, &extent)| acc * extent + i)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn from_vec(dims: &[usize], data: Vec<T>) -> Result<Self, TensorError> {
        let shape = Shape::new(dims)?;
        if shape.numel() != data.len() {
            return Err(TensorError::DataLength {
                shape: dims.to_vec(),
                len: data.len(),
                expected: shape.numel(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self, TensorError> {
        Self::full(dims, T::zero())
    }

    pub fn full(dims: &[usize], value: T) -> Result<Self, TensorError> {
        let shape = Shape::new(dims)?;
        let data = vec![value; shape.numel()];
        Ok(Tensor { shape, data })
    }

    pub fn from_fn(dims: &[usize], mut f: impl FnMut(usize) -> T) -> Result<Self, TensorError> {
        let shape = Shape::new(dims)?;
        let data = (0..shape.numel()).map(&mut f).collect();
        Ok(Tensor { shape, data })
    }

    pub fn scalar_vec(values: &[T]) -> Self {
        Tensor::from_vec(&[values.len().max(1)], values.to_vec()).expect("non-empty vector")
    }

    pub fn zeros_like(&self) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: vec![T::zero(); self.data.len()],
        }
    }

    pub fn ones_like(&self) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: vec![T::one(); self.data.len()],
        }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn rank(&self) -> usize {
        self.shape.rank()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, index: &[usize]) -> T {
        self.data[self.shape.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: T) {
        let offset = self.shape.offset(index);
        self.data[offset] = value;
    }

    /// Reinterprets the same data under a new shape with equal element count.
    pub fn reshape(self, dims: &[usize]) -> Result<Self, TensorError> {
        let shape = Shape::new(dims)?;
        if shape.numel() != self.data.len() {
            return Err(TensorError::ShapeMismatch {
                left: self.shape.0,
                right: dims.to_vec(),
            });
        }
        Ok(Tensor {
            shape,
            data: self.data,
        })
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::lit(x.as_f64())).collect(),
        }
    }

    pub fn elementwise(&self, op: BinaryOp, other: &Tensor<T>) -> Result<Self, TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                left: self.dims().to_vec(),
                right: other.dims().to_vec(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| match op {
                BinaryOp::Add => a + b,
                BinaryOp::Sub => a - b,
                BinaryOp::Mul => a * b,
            })
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Self, TensorError> {
        self.elementwise(BinaryOp::Add, other)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Self, TensorError> {
        self.elementwise(BinaryOp::Sub, other)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Self, TensorError> {
        self.elementwise(BinaryOp::Mul, other)
    }

    /// Tensor-scalar op; the only broadcast the crate supports.
    pub fn scalar_op(&self, op: BinaryOp, s: T) -> Self {
        let data = self
            .data
            .iter()
            .map(|&a| match op {
                BinaryOp::Add => a + s,
                BinaryOp::Sub => a - s,
                BinaryOp::Mul => a * s,
            })
            .collect();
        Tensor {
            shape: self.shape.clone(),
            data,
        }
    }

    pub fn scale(&self, s: T) -> Self {
        self.scalar_op(BinaryOp::Mul, s)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Self, TensorError> {
        if self.rank() != 2 || other.rank() != 2 {
            return Err(TensorError::NotMatrix {
                left: self.dims().to_vec(),
                right: other.dims().to_vec(),
            });
        }
        let (m, k) = (self.dims()[0], self.dims()[1]);
        let (k2, n) = (other.dims()[0], other.dims()[1]);
        if k != k2 {
            return Err(TensorError::InnerDimMismatch {
                left: self.dims().to_vec(),
                right: other.dims().to_vec(),
            });
        }
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                let brow = &other.data[p * n..(p + 1) * n];
                for (o, &b) in row.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Tensor::from_vec(&[m, n], out)
    }

    fn check_window(&self, origin: &[usize], size: &[usize]) -> Result<(), TensorError> {
        let rank = self.rank();
        if origin.len() != rank || size.len() != rank {
            return Err(TensorError::WindowRank {
                got: origin.len().max(size.len()),
                rank,
            });
        }
        for axis in 0..rank {
            let extent = self.dims()[axis];
            if size[axis] == 0 || origin[axis] + size[axis] > extent {
                return Err(TensorError::OutOfBounds {
                    axis,
                    origin: origin[axis],
                    size: size[axis],
                    extent,
                });
            }
        }
        Ok(())
    }

    /// Copies an axis-aligned block out of the tensor.
    pub fn crop(&self, origin: &[usize], size: &[usize]) -> Result<Self, TensorError> {
        self.check_window(origin, size)?;
        let rank = self.rank();
        let inner = size[rank - 1];
        let mut out = Vec::with_capacity(size.iter().product());
        // Walk every row of the window; the last axis is copied as a slice.
        let rows: usize = size[..rank - 1].iter().product();
        let mut idx = vec![0usize; rank];
        for row in 0..rows {
            let mut rem = row;
            for axis in (0..rank - 1).rev() {
                idx[axis] = origin[axis] + rem % size[axis];
                rem /= size[axis];
            }
            idx[rank - 1] = origin[rank - 1];
            let start = self.shape.offset(&idx);
            out.extend_from_slice(&self.data[start..start + inner]);
        }
        Tensor::from_vec(size, out)
    }

    /// Writes `block` into this tensor at `origin`; the inverse of [`Tensor::crop`].
    pub fn embed(&mut self, origin: &[usize], block: &Tensor<T>) -> Result<(), TensorError> {
        if block.rank() != self.rank() {
            return Err(TensorError::WindowRank {
                got: block.rank(),
                rank: self.rank(),
            });
        }
        let size = block.dims().to_vec();
        self.check_window(origin, &size)?;
        let rank = self.rank();
        let inner = size[rank - 1];
        let rows: usize = size[..rank - 1].iter().product();
        let mut idx = vec![0usize; rank];
        for row in 0..rows {
            let mut rem = row;
            for axis in (0..rank - 1).rev() {
                idx[axis] = origin[axis] + rem % size[axis];
                rem /= size[axis];
            }
            idx[rank - 1] = origin[rank - 1];
            let start = self.shape.offset(&idx);
            self.data[start..start + inner]
                .copy_from_slice(&block.data[row * inner..(row + 1) * inner]);
        }
        Ok(())
    }

    /// Reverses element order along one axis.
    pub fn flip_axis(&self, axis: usize) -> Result<Self, TensorError> {
        let rank = self.rank();
        if axis >= rank {
            return Err(TensorError::AxisOutOfRange { axis, rank });
        }
        let dims = self.dims();
        let outer: usize = dims[..axis].iter().product();
        let extent = dims[axis];
        let inner: usize = dims[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(self.data.len());
        for o in 0..outer {
            for i in (0..extent).rev() {
                let start = (o * extent + i) * inner;
                out.extend_from_slice(&self.data[start..start + inner]);
            }
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: out,
        })
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }
}
