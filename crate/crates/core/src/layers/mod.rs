//! Forward and backward passes for the conv block (convolution, batch
//! normalization, ReLU, pooling) and the classifier head (fully connected,
//! dropout, softmax).
//!
//! Backpropagation is explicit: each forward pass that needs state for its
//! backward pass returns a cache value, and the matching backward call
//! consumes it.
//!
//! Spatial tensors are `[C, D, H, W]` for one sample or `[N, C, D, H, W]` for
//! a batch. Feature vectors are `[n]` or `[N, n]`.

mod activation;
mod batchnorm;
mod conv;
mod dense;
mod dropout;
mod pool;

pub use activation::{relu_backward, relu_forward, softmax, softmax_backward, softmax_rows};
pub use batchnorm::{BatchNorm, BatchNormCache, BatchNormGrads, BatchStats};
pub use conv::{Conv3d, ConvGrads};
pub use dense::{Dense, DenseGrads};
pub use dropout::{dropout_backward, dropout_forward, DropoutMask};
pub use pool::{maxpool3d_backward, maxpool3d_forward, pooled_extent, PoolCache};

use crate::tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Train,
    Infer,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LayerError {
    #[error("channel mismatch: layer expects {expected} input channels, got {got}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("expected rank {expected}, got shape {got:?}")]
    Rank { expected: &'static str, got: Vec<usize> },
    #[error("batch normalization in train phase needs batch size >= 2, got {0}")]
    BatchTooSmall(usize),
    #[error("pooling needs every spatial extent >= 2, axis {axis} has extent {extent}")]
    PoolTooSmall { axis: usize, extent: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("dropout rate must lie in [0, 1), got {0}")]
    InvalidRate(f64),
    #[error("invalid layer parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Splits a spatial tensor into `(batch, channels, d, h, w)`; rank 4 counts as a batch of one.
pub(crate) fn spatial_dims(dims: &[usize]) -> Result<(usize, usize, usize, usize, usize), LayerError> {
    match *dims {
        [c, d, h, w] => Ok((1, c, d, h, w)),
        [n, c, d, h, w] => Ok((n, c, d, h, w)),
        _ => Err(LayerError::Rank {
            expected: "4 or 5",
            got: dims.to_vec(),
        }),
    }
}

/// Splits a feature tensor into `(batch, features)`; rank 1 counts as a batch of one.
pub(crate) fn feature_dims(dims: &[usize]) -> Result<(usize, usize), LayerError> {
    match *dims {
        [n] => Ok((1, n)),
        [b, n] => Ok((b, n)),
        _ => Err(LayerError::Rank {
            expected: "1 or 2",
            got: dims.to_vec(),
        }),
    }
}

/// Dot product with eight independent accumulators so the loop vectorizes.
/// The summation order is fixed, so results are reproducible.
#[inline]
pub(crate) fn dot<T: crate::tensor::Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (xa, xb) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += xa[l] * xb[l];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (&x, &y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}
