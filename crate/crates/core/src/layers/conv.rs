use rand::Rng;
use rayon::prelude::*;

use super::{spatial_dims, LayerError};
use crate::tensor::{gemm_strided, Real, Tensor};

/// 3D convolution, stride 1, zero-padded so output extents equal input extents.
///
/// For kernel size `k` the padding before each axis is `(k - 1) / 2` and the
/// padding after is the remainder, so even kernels lean one voxel forward.
/// The operation is a cross-correlation:
/// `out[o, z, y, x] = b[o] + sum_{c, dz, dy, dx} w[o, c, dz, dy, dx] * in[c, z + dz - p, y + dy - p, x + dx - p]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3d<T = f32> {
    /// `[C_out, C_in, k, k, k]`
    pub kernels: Tensor<T>,
    /// `[C_out]`
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    /// `None` when the caller did not ask for it (first layer of a pipeline).
    pub input: Option<Tensor<T>>,
    pub kernels: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Output indices `i` in `[0, extent)` whose shifted index `i + shift` is also in range.
#[inline]
fn span(extent: usize, shift: isize) -> (usize, usize) {
    let lo = (-shift).max(0) as usize;
    let hi = (extent as isize - shift).min(extent as isize).max(0) as usize;
    (lo.min(hi), hi)
}

impl<T: Real> Conv3d<T> {
    pub fn new(kernels: Tensor<T>, bias: Tensor<T>) -> Result<Self, LayerError> {
        let dims = kernels.dims();
        if dims.len() != 5 || dims[2] != dims[3] || dims[3] != dims[4] {
            return Err(LayerError::InvalidParams(format!(
                "kernels must be [C_out, C_in, k, k, k], got {dims:?}"
            )));
        }
        if bias.dims() != [dims[0]] {
            return Err(LayerError::InvalidParams(format!(
                "bias length {:?} does not match C_out {}",
                bias.dims(),
                dims[0]
            )));
        }
        Ok(Conv3d { kernels, bias })
    }

    /// Glorot-uniform kernels, zero bias.
    pub fn init<R: Rng + ?Sized>(c_in: usize, c_out: usize, k: usize, rng: &mut R) -> Result<Self, LayerError> {
        let k3 = k * k * k;
        let limit = (6.0 / ((c_in + c_out) * k3) as f64).sqrt();
        let kernels = Tensor::from_fn(&[c_out, c_in, k, k, k], |_| T::lit(rng.gen_range(-limit..limit)))?;
        let bias = Tensor::zeros(&[c_out])?;
        Ok(Conv3d { kernels, bias })
    }

    pub fn out_channels(&self) -> usize {
        self.kernels.dims()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.dims()[1]
    }

    pub fn kernel_size(&self) -> usize {
        self.kernels.dims()[2]
    }

    pub fn num_params(&self) -> usize {
        self.kernels.len() + self.bias.len()
    }

    fn pad(&self) -> isize {
        ((self.kernel_size() - 1) / 2) as isize
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<(usize, usize, usize, usize, usize), LayerError> {
        let dims = spatial_dims(input.dims())?;
        if dims.1 != self.in_channels() {
            return Err(LayerError::ChannelMismatch {
                expected: self.in_channels(),
                got: dims.1,
            });
        }
        Ok(dims)
    }

    /// Unfolds depth slices `z0..z1` of one `[C_in, D, H, W]` sample into
    /// `[C_in * k^3, (z1 - z0) * H * W]` so the convolution over that slab
    /// becomes one matrix product.
    fn im2col(&self, sample: &[T], dims: (usize, usize, usize), z0: usize, z1: usize, cols: &mut [T]) {
        let (d, h, w) = dims;
        let k = self.kernel_size();
        let pad = self.pad();
        let vol = d * h * w;
        let tile = (z1 - z0) * h * w;
        for (row, dst) in cols[..self.unfold_rows() * tile].chunks_mut(tile).enumerate() {
            let (c, off) = (row / (k * k * k), row % (k * k * k));
            let (dz, dy, dx) = (off / (k * k), (off / k) % k, off % k);
            let chan = &sample[c * vol..(c + 1) * vol];
            let (sz, sy, sx) = (dz as isize - pad, dy as isize - pad, dx as isize - pad);
            let (zlo, zhi) = span(d, sz);
            let (ylo, yhi) = span(h, sy);
            let (xlo, xhi) = span(w, sx);
            dst.fill(T::zero());
            if xlo == xhi {
                continue;
            }
            for z in zlo.max(z0)..zhi.min(z1) {
                let zi = (z as isize + sz) as usize;
                for y in ylo..yhi {
                    let yi = (y as isize + sy) as usize;
                    let src = &chan[(zi * h + yi) * w..][..w];
                    let out = &mut dst[((z - z0) * h + y) * w..][..w];
                    let a = (xlo as isize + sx) as usize;
                    out[xlo..xhi].copy_from_slice(&src[a..a + (xhi - xlo)]);
                }
            }
        }
    }

    /// Scatter-adds an unfolded slab gradient back onto `[C_in, D, H, W]`; adjoint of `im2col`.
    fn col2im(&self, cols: &[T], dims: (usize, usize, usize), z0: usize, z1: usize, sample: &mut [T]) {
        let (d, h, w) = dims;
        let k = self.kernel_size();
        let pad = self.pad();
        let vol = d * h * w;
        let tile = (z1 - z0) * h * w;
        for (row, src) in cols[..self.unfold_rows() * tile].chunks(tile).enumerate() {
            let (c, off) = (row / (k * k * k), row % (k * k * k));
            let (dz, dy, dx) = (off / (k * k), (off / k) % k, off % k);
            let chan = &mut sample[c * vol..(c + 1) * vol];
            let (sz, sy, sx) = (dz as isize - pad, dy as isize - pad, dx as isize - pad);
            let (zlo, zhi) = span(d, sz);
            let (ylo, yhi) = span(h, sy);
            let (xlo, xhi) = span(w, sx);
            if xlo == xhi {
                continue;
            }
            for z in zlo.max(z0)..zhi.min(z1) {
                let zi = (z as isize + sz) as usize;
                for y in ylo..yhi {
                    let yi = (y as isize + sy) as usize;
                    let g = &src[((z - z0) * h + y) * w..][..w];
                    let a = (xlo as isize + sx) as usize;
                    let dst = &mut chan[(zi * h + yi) * w + a..][..xhi - xlo];
                    for (o, &v) in dst.iter_mut().zip(&g[xlo..xhi]) {
                        *o += v;
                    }
                }
            }
        }
    }

    fn unfold_rows(&self) -> usize {
        let k = self.kernel_size();
        self.in_channels() * k * k * k
    }

    /// Depth slices per slab, sized so the unfolded slab stays cache resident.
    fn slab_depth(&self, h: usize, w: usize) -> usize {
        const SLAB_ELEMS: usize = 1 << 17;
        (SLAB_ELEMS / (self.unfold_rows() * h * w)).max(1)
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>, LayerError> {
        let (n, c_in, d, h, w) = self.check_input(input)?;
        let c_out = self.out_channels();
        let rows = self.unfold_rows();
        let vol = d * h * w;
        let plane = h * w;
        let slab = self.slab_depth(h, w).min(d);
        let src = input.data();
        let kern = self.kernels.data();
        let bias = self.bias.data();

        let mut out = vec![T::zero(); n * c_out * vol];
        out.par_chunks_mut(c_out * vol).enumerate().for_each(|(s, out_s)| {
            let sample = &src[s * c_in * vol..(s + 1) * c_in * vol];
            let mut cols = vec![T::zero(); rows * slab * plane];
            for (o, chan) in out_s.chunks_mut(vol).enumerate() {
                chan.fill(bias[o]);
            }
            for z0 in (0..d).step_by(slab) {
                let z1 = (z0 + slab).min(d);
                let tile = (z1 - z0) * plane;
                self.im2col(sample, (d, h, w), z0, z1, &mut cols);
                gemm_strided(
                    c_out,
                    rows,
                    tile,
                    (kern, rows as isize, 1),
                    (&cols, tile as isize, 1),
                    (&mut out_s[z0 * plane..], vol as isize),
                    true,
                );
            }
        });
        let mut dims = input.dims().to_vec();
        let ch_axis = dims.len() - 4;
        dims[ch_axis] = c_out;
        Ok(Tensor::from_vec(&dims, out)?)
    }

    /// Gradients of a scalar loss with respect to input, kernels and bias,
    /// given the forward input and the upstream gradient. Kernel and bias
    /// gradients are summed over the batch in sample order.
    pub fn backward(
        &self,
        input: &Tensor<T>,
        grad_out: &Tensor<T>,
        need_input_grad: bool,
    ) -> Result<ConvGrads<T>, LayerError> {
        let (n, c_in, d, h, w) = self.check_input(input)?;
        let c_out = self.out_channels();
        let rows = self.unfold_rows();
        let vol = d * h * w;
        let plane = h * w;
        let slab = self.slab_depth(h, w).min(d);
        let mut expect = input.dims().to_vec();
        let ch_axis = expect.len() - 4;
        expect[ch_axis] = c_out;
        if grad_out.dims() != expect.as_slice() {
            return Err(crate::tensor::TensorError::ShapeMismatch {
                left: expect,
                right: grad_out.dims().to_vec(),
            }
            .into());
        }
        let src = input.data();
        let gsrc = grad_out.data();
        let kern = self.kernels.data();

        // Per-sample partial gradients; reduced below in sample order.
        let partials: Vec<(Vec<T>, Vec<T>, Option<Vec<T>>)> = (0..n)
            .into_par_iter()
            .map(|s| {
                let g_s = &gsrc[s * c_out * vol..(s + 1) * c_out * vol];
                let sample = &src[s * c_in * vol..(s + 1) * c_in * vol];
                let mut cols = vec![T::zero(); rows * slab * plane];
                let mut gk = vec![T::zero(); c_out * rows];
                let mut gin = need_input_grad.then(|| vec![T::zero(); c_in * vol]);
                for z0 in (0..d).step_by(slab) {
                    let z1 = (z0 + slab).min(d);
                    let tile = (z1 - z0) * plane;
                    self.im2col(sample, (d, h, w), z0, z1, &mut cols);
                    gemm_strided(
                        c_out,
                        tile,
                        rows,
                        (&g_s[z0 * plane..], vol as isize, 1),
                        (&cols, 1, tile as isize),
                        (&mut gk, rows as isize),
                        true,
                    );
                    if let Some(gin) = gin.as_mut() {
                        gemm_strided(
                            rows,
                            c_out,
                            tile,
                            (kern, 1, rows as isize),
                            (&g_s[z0 * plane..], vol as isize, 1),
                            (&mut cols, tile as isize),
                            false,
                        );
                        self.col2im(&cols, (d, h, w), z0, z1, gin);
                    }
                }
                let gb: Vec<T> = g_s.chunks(vol).map(|p| p.iter().copied().sum()).collect();
                (gk, gb, gin)
            })
            .collect();

        let mut gk = vec![T::zero(); c_out * rows];
        let mut gb = vec![T::zero(); c_out];
        let mut gin = if need_input_grad { Vec::with_capacity(n * c_in * vol) } else { Vec::new() };
        for (pk, pb, pin) in partials {
            for (a, b) in gk.iter_mut().zip(pk) {
                *a += b;
            }
            for (a, b) in gb.iter_mut().zip(pb) {
                *a += b;
            }
            if let Some(p) = pin {
                gin.extend(p);
            }
        }
        let grad_input = if need_input_grad {
            Some(Tensor::from_vec(input.dims(), gin)?)
        } else {
            None
        };
        Ok(ConvGrads {
            input: grad_input,
            kernels: Tensor::from_vec(self.kernels.dims(), gk)?,
            bias: Tensor::from_vec(&[c_out], gb)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Seven-deep loop straight from the definition, zero padding handled by bounds checks.
    fn naive_conv(input: &Tensor<f64>, conv: &Conv3d<f64>) -> Tensor<f64> {
        let [c_in, d, h, w] = [input.dims()[0], input.dims()[1], input.dims()[2], input.dims()[3]];
        let (c_out, k) = (conv.out_channels(), conv.kernel_size());
        let p = ((k - 1) / 2) as isize;
        let mut out = Tensor::<f64>::zeros(&[c_out, d, h, w]).unwrap();
        for o in 0..c_out {
            for z in 0..d {
                for y in 0..h {
                    for x in 0..w {
                        let mut acc = conv.bias.data()[o];
                        for c in 0..c_in {
                            for dz in 0..k {
                                for dy in 0..k {
                                    for dx in 0..k {
                                        let zi = z as isize + dz as isize - p;
                                        let yi = y as isize + dy as isize - p;
                                        let xi = x as isize + dx as isize - p;
                                        if zi < 0 || yi < 0 || xi < 0 || zi >= d as isize || yi >= h as isize || xi >= w as isize {
                                            continue;
                                        }
                                        acc += conv.kernels.get(&[o, c, dz, dy, dx])
                                            * input.get(&[c, zi as usize, yi as usize, xi as usize]);
                                    }
                                }
                            }
                        }
                        out.set(&[o, z, y, x], acc);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut kernels = Tensor::<f64>::zeros(&[1, 1, 3, 3, 3]).unwrap();
        kernels.set(&[0, 0, 1, 1, 1], 1.0);
        let conv = Conv3d::new(kernels, Tensor::zeros(&[1]).unwrap()).unwrap();
        let input = Tensor::from_fn(&[1, 5, 4, 3], |i| (i as f64).sin()).unwrap();
        assert_eq!(conv.forward(&input).unwrap(), input);
    }

    #[test]
    fn same_padding_keeps_extent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let conv = Conv3d::<f32>::init(1, 16, 5, &mut rng).unwrap();
        let input = Tensor::<f32>::zeros(&[1, 28, 28, 28]).unwrap();
        assert_eq!(conv.forward(&input).unwrap().dims(), &[16, 28, 28, 28]);
    }

    #[test]
    fn channel_mismatch_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let conv = Conv3d::<f64>::init(2, 3, 3, &mut rng).unwrap();
        let input = Tensor::<f64>::zeros(&[1, 4, 4, 4]).unwrap();
        assert_eq!(
            conv.forward(&input).unwrap_err(),
            LayerError::ChannelMismatch { expected: 2, got: 1 }
        );
    }

    #[test]
    fn matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for k in [2, 3, 4] {
            let conv = Conv3d::<f64>::new(
                Tensor::from_fn(&[3, 2, k, k, k], |_| rng.gen_range(-1.0..1.0)).unwrap(),
                Tensor::from_fn(&[3], |_| rng.gen_range(-1.0..1.0)).unwrap(),
            )
            .unwrap();
            let input = Tensor::from_fn(&[2, 4, 4, 4], |_| rng.gen_range(-1.0..1.0)).unwrap();
            let got = conv.forward(&input).unwrap();
            let want = naive_conv(&input, &conv);
            for (g, w) in got.data().iter().zip(want.data()) {
                assert!((g - w).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn kernel_wider_than_volume() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let conv = Conv3d::<f64>::init(2, 2, 5, &mut rng).unwrap();
        let input = Tensor::from_fn(&[2, 3, 1, 2], |_| rng.gen_range(-1.0..1.0)).unwrap();
        let got = conv.forward(&input).unwrap();
        let want = naive_conv(&input, &conv);
        for (g, w) in got.data().iter().zip(want.data()) {
            assert!((g - w).abs() < 1e-10);
        }
        // The input gradient is the adjoint of the bias-free forward map.
        let r = Tensor::from_fn(got.dims(), |_| rng.gen_range(-1.0..1.0)).unwrap();
        let gx = conv.backward(&input, &r, true).unwrap().input.unwrap();
        let unbiased = Conv3d::new(conv.kernels.clone(), Tensor::zeros(&[2]).unwrap()).unwrap();
        let lhs: f64 = unbiased.forward(&input).unwrap().data().iter().zip(r.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = input.data().iter().zip(gx.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn batched_forward_equals_per_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let conv = Conv3d::<f64>::init(2, 3, 3, &mut rng).unwrap();
        let a = Tensor::from_fn(&[2, 3, 4, 5], |_| rng.gen_range(-1.0..1.0)).unwrap();
        let b = Tensor::from_fn(&[2, 3, 4, 5], |_| rng.gen_range(-1.0..1.0)).unwrap();
        let mut both = a.data().to_vec();
        both.extend_from_slice(b.data());
        let batch = Tensor::from_vec(&[2, 2, 3, 4, 5], both).unwrap();
        let out = conv.forward(&batch).unwrap();
        let half = out.len() / 2;
        assert_eq!(&out.data()[..half], conv.forward(&a).unwrap().data());
        assert_eq!(&out.data()[half..], conv.forward(&b).unwrap().data());
    }
}
