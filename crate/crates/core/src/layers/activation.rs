use super::{feature_dims, LayerError};
use crate::tensor::{Real, Tensor, TensorError};

pub fn relu_forward<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    let mut out = input.clone();
    for v in out.data_mut() {
        *v = v.max(T::zero());
    }
    out
}

/// Passes the gradient where the forward input was strictly positive.
pub fn relu_backward<T: Real>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>, LayerError> {
    if input.dims() != grad_out.dims() {
        return Err(TensorError::ShapeMismatch {
            left: input.dims().to_vec(),
            right: grad_out.dims().to_vec(),
        }
        .into());
    }
    let mut g = grad_out.clone();
    for (gv, &x) in g.data_mut().iter_mut().zip(input.data()) {
        if x <= T::zero() {
            *gv = T::zero();
        }
    }
    Ok(g)
}

fn softmax_slice<T: Real>(logits: &[T], out: &mut [T]) {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o = *o / total;
    }
}

/// Numerically stable softmax of a logit vector `[c]`.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>, LayerError> {
    if logits.rank() != 1 {
        return Err(LayerError::Rank {
            expected: "1",
            got: logits.dims().to_vec(),
        });
    }
    let mut out = logits.zeros_like();
    softmax_slice(logits.data(), out.data_mut());
    Ok(out)
}

/// Row-wise softmax of `[N, c]` (or `[c]`).
pub fn softmax_rows<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>, LayerError> {
    let (_, c) = feature_dims(logits.dims())?;
    let mut out = logits.zeros_like();
    for (row, dst) in logits.data().chunks(c).zip(out.data_mut().chunks_mut(c)) {
        softmax_slice(row, dst);
    }
    Ok(out)
}

/// Gradient with respect to logits given softmax outputs and upstream gradient, row-wise.
pub fn softmax_backward<T: Real>(probs: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>, LayerError> {
    let (_, c) = feature_dims(probs.dims())?;
    if probs.dims() != grad_out.dims() {
        return Err(TensorError::ShapeMismatch {
            left: probs.dims().to_vec(),
            right: grad_out.dims().to_vec(),
        }
        .into());
    }
    let mut out = probs.zeros_like();
    for ((p, g), dst) in probs
        .data()
        .chunks(c)
        .zip(grad_out.data().chunks(c))
        .zip(out.data_mut().chunks_mut(c))
    {
        let inner: T = p.iter().zip(g).map(|(&pi, &gi)| pi * gi).sum();
        for j in 0..c {
            dst[j] = p[j] * (g[j] - inner);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(&[x.len()], x.to_vec()).unwrap()
    }

    #[test]
    fn relu_examples() {
        assert_eq!(relu_forward(&v(&[-1.0, 0.0, 2.0])).data(), &[0.0, 0.0, 2.0]);
        let pos = v(&[0.5, 3.0]);
        assert_eq!(relu_forward(&pos), pos);
        let g = relu_backward(&v(&[-0.5]), &v(&[7.0])).unwrap();
        assert_eq!(g.data(), &[0.0]);
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&v(&[0.0, 0.0])).unwrap().data(), &[0.5, 0.5]);
        let p = softmax(&v(&[2f64.ln(), 0.0])).unwrap();
        assert!((p.data()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p.data()[1] - 1.0 / 3.0).abs() < 1e-15);
        let big = softmax(&v(&[1000.0, 1000.0])).unwrap();
        assert_eq!(big.data(), &[0.5, 0.5]);
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(
            logits in prop::collection::vec(-50.0f64..50.0, 2..8),
            shift in -100.0f64..100.0,
        ) {
            let p = softmax(&v(&logits)).unwrap();
            prop_assert!((p.sum() - 1.0).abs() < 1e-6);
            prop_assert!(p.data().iter().all(|&x| x > 0.0 || logits.iter().any(|&l| l - x > 700.0)));
            let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
            let q = softmax(&v(&shifted)).unwrap();
            for (a, b) in p.data().iter().zip(q.data()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
