use super::DataError;
use crate::tensor::Tensor;

fn kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let w: Vec<f64> = (-radius..=radius)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Separable Gaussian blur over the last three axes, kernel radius
/// `ceil(3 sigma)`, normalized weights, replicated edges. `sigma == 0`
/// returns the input unchanged.
pub fn gaussian_blur3d(roi: &Tensor<f32>, sigma: f64) -> Result<Tensor<f32>, DataError> {
    if !(sigma >= 0.0) {
        return Err(DataError::NegativeSigma(sigma));
    }
    if roi.rank() < 3 {
        return Err(DataError::Invalid(format!("blur needs 3 spatial axes, got {:?}", roi.dims())));
    }
    if sigma == 0.0 {
        return Ok(roi.clone());
    }
    let k = kernel(sigma);
    let radius = (k.len() / 2) as i64;
    let dims = roi.dims();
    let rank = dims.len();
    let (d, h, w) = (dims[rank - 3], dims[rank - 2], dims[rank - 1]);
    let vol = d * h * w;
    let mut data: Vec<f64> = roi.data().iter().map(|&v| v as f64).collect();
    let mut line = Vec::new();
    for cube in data.chunks_mut(vol) {
        // A line along an axis starts wherever that axis coordinate is 0.
        for (extent, stride) in [(w, 1usize), (h, w), (d, h * w)] {
            for base in 0..vol {
                if (base / stride) % extent != 0 {
                    continue;
                }
                line.clear();
                line.extend((0..extent).map(|i| cube[base + i * stride]));
                for i in 0..extent {
                    let mut acc = 0.0;
                    for (t, &kw) in k.iter().enumerate() {
                        let src = (i as i64 + t as i64 - radius).clamp(0, extent as i64 - 1) as usize;
                        acc += kw * line[src];
                    }
                    cube[base + i * stride] = acc;
                }
            }
        }
    }
    Ok(Tensor::from_vec(dims, data.into_iter().map(|v| v as f32).collect())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_sigma_is_identity() {
        let t = Tensor::from_fn(&[1, 3, 4, 5], |i| (i as f32).sin()).unwrap();
        assert_eq!(gaussian_blur3d(&t, 0.0).unwrap(), t);
        assert!(matches!(gaussian_blur3d(&t, -0.1), Err(DataError::NegativeSigma(_))));
    }

    #[test]
    fn kernel_radius_and_normalization() {
        assert_eq!(kernel(1.2).len(), 2 * 4 + 1);
        assert_eq!(kernel(0.3).len(), 3);
        assert!((kernel(0.7).iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn interior_blob_mass_preserved() {
        let mut t = Tensor::<f32>::zeros(&[16, 16, 16]).unwrap();
        t.set(&[8, 8, 8], 1.0);
        t.set(&[7, 8, 9], 0.5);
        let before = t.sum() as f64;
        let after = gaussian_blur3d(&t, 1.2).unwrap().sum() as f64;
        assert!(((after - before) / before).abs() < 1e-6);
    }

    #[test]
    fn matches_direct_3d_convolution() {
        let t = Tensor::from_fn(&[4, 5, 6], |i| ((i * 37) % 11) as f32).unwrap();
        let sigma = 0.8;
        let k = kernel(sigma);
        let r = (k.len() / 2) as i64;
        let at = |z: i64, y: i64, x: i64| {
            t.get(&[z.clamp(0, 3) as usize, y.clamp(0, 4) as usize, x.clamp(0, 5) as usize]) as f64
        };
        let out = gaussian_blur3d(&t, sigma).unwrap();
        for z in 0..4i64 {
            for y in 0..5i64 {
                for x in 0..6i64 {
                    let mut acc = 0.0;
                    for a in -r..=r {
                        for b in -r..=r {
                            for c in -r..=r {
                                acc += k[(a + r) as usize] * k[(b + r) as usize] * k[(c + r) as usize] * at(z + a, y + b, x + c);
                            }
                        }
                    }
                    let got = out.get(&[z as usize, y as usize, x as usize]) as f64;
                    assert!((got - acc).abs() < 1e-5, "{got} vs {acc}");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn constant_volume_unchanged(c in -5.0f32..5.0, sigma in 0.0f64..1.2) {
            let t = Tensor::full(&[1, 5, 6, 7], c).unwrap();
            let out = gaussian_blur3d(&t, sigma).unwrap();
            for v in out.data() {
                prop_assert!((v - c).abs() <= 1e-6 * c.abs().max(1.0));
            }
        }
    }
}
