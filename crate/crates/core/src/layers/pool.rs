use super::{spatial_dims, LayerError};
use crate::tensor::{Real, Tensor, TensorError};

/// Output extent of a 2x2x2 stride-2 pooling window; the odd remainder is dropped.
pub fn pooled_extent(extent: usize) -> usize {
    extent / 2
}

#[derive(Debug, Clone)]
pub struct PoolCache {
    input_dims: Vec<usize>,
    /// Flat input offset of each output element's maximum.
    argmax: Vec<u32>,
}

/// Non-overlapping 2x2x2 max pooling. Ties go to the first element in row-major order.
pub fn maxpool3d_forward<T: Real>(input: &Tensor<T>) -> Result<(Tensor<T>, PoolCache), LayerError> {
    let (n, c, d, h, w) = spatial_dims(input.dims())?;
    for (axis, extent) in [(0, d), (1, h), (2, w)] {
        if extent < 2 {
            return Err(LayerError::PoolTooSmall { axis, extent });
        }
    }
    let (od, oh, ow) = (d / 2, h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * od * oh * ow);
    let mut argmax = Vec::with_capacity(out.capacity());
    for plane in 0..n * c {
        let base = plane * d * h * w;
        for z in 0..od {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut best = base + ((2 * z) * h + 2 * y) * w + 2 * xo;
                    for dz in 0..2 {
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let i = base + ((2 * z + dz) * h + 2 * y + dy) * w + 2 * xo + dx;
                                if x[i] > x[best] {
                                    best = i;
                                }
                            }
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best as u32);
                }
            }
        }
    }
    let mut dims = input.dims().to_vec();
    let r = dims.len();
    dims[r - 3] = od;
    dims[r - 2] = oh;
    dims[r - 1] = ow;
    Ok((
        Tensor::from_vec(&dims, out)?,
        PoolCache {
            input_dims: input.dims().to_vec(),
            argmax,
        },
    ))
}

/// Routes each output gradient to its window's maximum.
pub fn maxpool3d_backward<T: Real>(cache: &PoolCache, grad_out: &Tensor<T>) -> Result<Tensor<T>, LayerError> {
    if grad_out.len() != cache.argmax.len() {
        return Err(TensorError::ShapeMismatch {
            left: vec![cache.argmax.len()],
            right: grad_out.dims().to_vec(),
        }
        .into());
    }
    let mut gin = Tensor::zeros(&cache.input_dims)?;
    let g = gin.data_mut();
    for (&i, &go) in cache.argmax.iter().zip(grad_out.data()) {
        g[i as usize] += go;
    }
    Ok(gin)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_max() {
        let input = Tensor::<f64>::from_fn(&[1, 2, 2, 2], |i| (i + 1) as f64).unwrap();
        let (out, _) = maxpool3d_forward(&input).unwrap();
        assert_eq!(out.dims(), &[1, 1, 1, 1]);
        assert_eq!(out.data(), &[8.0]);
    }

    #[test]
    fn odd_extent_floors() {
        assert_eq!(pooled_extent(7), 3);
        let input = Tensor::<f64>::zeros(&[1, 7, 7, 7]).unwrap();
        let (out, _) = maxpool3d_forward(&input).unwrap();
        assert_eq!(out.dims(), &[1, 3, 3, 3]);
    }

    #[test]
    fn ties_go_to_first_index() {
        let input = Tensor::<f64>::zeros(&[1, 2, 2, 2]).unwrap();
        let (_, cache) = maxpool3d_forward(&input).unwrap();
        let g = maxpool3d_backward(&cache, &Tensor::full(&[1, 1, 1, 1], 1.0).unwrap()).unwrap();
        assert_eq!(g.data()[0], 1.0);
        assert_eq!(g.sum(), 1.0);
    }

    #[test]
    fn extent_one_rejected() {
        let input = Tensor::<f64>::zeros(&[1, 2, 1, 2]).unwrap();
        assert_eq!(
            maxpool3d_forward(&input).unwrap_err(),
            LayerError::PoolTooSmall { axis: 1, extent: 1 }
        );
    }
}
