use super::{spatial_dims, LayerError};
use crate::tensor::{Real, Tensor};

/// Per-channel batch normalization over batch and spatial positions.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T = f32> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub epsilon: T,
    /// Weight kept by the running average: `r <- momentum * r + (1 - momentum) * batch`.
    pub momentum: T,
}

/// Batch statistics from a train-phase forward pass, applied to the running
/// averages separately so the forward pass itself stays pure.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    normalized: Tensor<T>,
    inv_std: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct BatchNormGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(channels: usize, epsilon: T, momentum: T) -> Self {
        BatchNorm {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            epsilon,
            momentum,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, input: &Tensor<T>) -> Result<(usize, usize, usize), LayerError> {
        let (n, c, d, h, w) = spatial_dims(input.dims())?;
        if c != self.channels() {
            return Err(LayerError::ChannelMismatch {
                expected: self.channels(),
                got: c,
            });
        }
        Ok((n, c, d * h * w))
    }

    /// Normalizes with the batch's own statistics (biased variance).
    pub fn forward_train(&self, input: &Tensor<T>) -> Result<(Tensor<T>, BatchNormCache<T>, BatchStats<T>), LayerError> {
        let (n, c, vol) = self.check(input)?;
        if n < 2 {
            return Err(LayerError::BatchTooSmall(n));
        }
        let x = input.data();
        let count = T::lit((n * vol) as f64);
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ch in 0..c {
            let mut s = T::zero();
            for smp in 0..n {
                s += x[(smp * c + ch) * vol..][..vol].iter().copied().sum::<T>();
            }
            let m = s / count;
            let mut v = T::zero();
            for smp in 0..n {
                v += x[(smp * c + ch) * vol..][..vol]
                    .iter()
                    .map(|&xi| (xi - m) * (xi - m))
                    .sum::<T>();
            }
            mean[ch] = m;
            var[ch] = v / count;
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + self.epsilon).sqrt()).collect();

        let mut normalized = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        for smp in 0..n {
            for ch in 0..c {
                let base = (smp * c + ch) * vol;
                let (m, is, g, b) = (mean[ch], inv_std[ch], self.gamma[ch], self.beta[ch]);
                for i in base..base + vol {
                    let xh = (x[i] - m) * is;
                    normalized[i] = xh;
                    out[i] = g * xh + b;
                }
            }
        }
        let dims = input.dims();
        Ok((
            Tensor::from_vec(dims, out)?,
            BatchNormCache {
                normalized: Tensor::from_vec(dims, normalized)?,
                inv_std,
            },
            BatchStats { mean, var },
        ))
    }

    /// Normalizes with the running statistics.
    pub fn forward_infer(&self, input: &Tensor<T>) -> Result<Tensor<T>, LayerError> {
        let (n, c, vol) = self.check(input)?;
        let mut out = input.data().to_vec();
        for smp in 0..n {
            for ch in 0..c {
                let is = T::one() / (self.running_var[ch] + self.epsilon).sqrt();
                let (m, g, b) = (self.running_mean[ch], self.gamma[ch], self.beta[ch]);
                for v in &mut out[(smp * c + ch) * vol..][..vol] {
                    *v = g * (*v - m) * is + b;
                }
            }
        }
        Ok(Tensor::from_vec(input.dims(), out)?)
    }

    pub fn update_running(&mut self, stats: &BatchStats<T>) {
        let keep = self.momentum;
        let take = T::one() - keep;
        for ch in 0..self.channels() {
            self.running_mean[ch] = keep * self.running_mean[ch] + take * stats.mean[ch];
            self.running_var[ch] = keep * self.running_var[ch] + take * stats.var[ch];
        }
    }

    pub fn backward(&self, cache: &BatchNormCache<T>, grad_out: &Tensor<T>) -> Result<BatchNormGrads<T>, LayerError> {
        let (n, c, vol) = self.check(grad_out)?;
        if grad_out.dims() != cache.normalized.dims() {
            return Err(crate::tensor::TensorError::ShapeMismatch {
                left: cache.normalized.dims().to_vec(),
                right: grad_out.dims().to_vec(),
            }
            .into());
        }
        let g = grad_out.data();
        let xh = cache.normalized.data();
        let count = T::lit((n * vol) as f64);
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        for smp in 0..n {
            for ch in 0..c {
                let base = (smp * c + ch) * vol;
                for i in base..base + vol {
                    dbeta[ch] += g[i];
                    dgamma[ch] += g[i] * xh[i];
                }
            }
        }
        // dx = gamma * inv_std / M * (M * dy - sum(dy) - xh * sum(dy * xh))
        let mut dx = vec![T::zero(); g.len()];
        for smp in 0..n {
            for ch in 0..c {
                let base = (smp * c + ch) * vol;
                let scale = self.gamma[ch] * cache.inv_std[ch] / count;
                for i in base..base + vol {
                    dx[i] = scale * (count * g[i] - dbeta[ch] - xh[i] * dgamma[ch]);
                }
            }
        }
        Ok(BatchNormGrads {
            input: Tensor::from_vec(grad_out.dims(), dx)?,
            gamma: dgamma,
            beta: dbeta,
        })
    }
}
