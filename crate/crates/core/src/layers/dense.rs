use rand::Rng;

use super::{dot, feature_dims, LayerError};
use crate::tensor::{Real, Tensor};

/// Fully connected layer `y = W x + b` with `W: [p, n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T = f32> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct DenseGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> Dense<T> {
    pub fn new(weights: Tensor<T>, bias: Tensor<T>) -> Result<Self, LayerError> {
        if weights.rank() != 2 || bias.dims() != [weights.dims()[0]] {
            return Err(LayerError::InvalidParams(format!(
                "dense weights {:?} / bias {:?}",
                weights.dims(),
                bias.dims()
            )));
        }
        Ok(Dense { weights, bias })
    }

    /// Glorot-uniform weights, zero bias.
    pub fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Result<Self, LayerError> {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        Ok(Dense {
            weights: Tensor::from_fn(&[outputs, inputs], |_| T::lit(rng.gen_range(-limit..limit)))?,
            bias: Tensor::zeros(&[outputs])?,
        })
    }

    pub fn inputs(&self) -> usize {
        self.weights.dims()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weights.dims()[0]
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn check(&self, input: &Tensor<T>) -> Result<usize, LayerError> {
        let (batch, n) = feature_dims(input.dims())?;
        if n != self.inputs() {
            return Err(LayerError::DimMismatch {
                expected: self.inputs(),
                got: n,
            });
        }
        Ok(batch)
    }

    /// Accepts `[n]` or `[N, n]`; output keeps the same rank.
    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>, LayerError> {
        let batch = self.check(input)?;
        let (p, n) = (self.outputs(), self.inputs());
        let wt = self.weights.data();
        let mut out = Vec::with_capacity(batch * p);
        for x in input.data().chunks(n) {
            for (j, &b) in self.bias.data().iter().enumerate() {
                out.push(b + dot(&wt[j * n..(j + 1) * n], x));
            }
        }
        let dims: Vec<usize> = if input.rank() == 1 { vec![p] } else { vec![batch, p] };
        Ok(Tensor::from_vec(&dims, out)?)
    }

    pub fn backward(&self, input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<DenseGrads<T>, LayerError> {
        let batch = self.check(input)?;
        let (p, n) = (self.outputs(), self.inputs());
        if grad_out.len() != batch * p {
            return Err(LayerError::DimMismatch {
                expected: batch * p,
                got: grad_out.len(),
            });
        }
        let wt = self.weights.data();
        let mut gx = vec![T::zero(); batch * n];
        let mut gw = vec![T::zero(); p * n];
        let mut gb = vec![T::zero(); p];
        for s in 0..batch {
            let x = &input.data()[s * n..(s + 1) * n];
            let g = &grad_out.data()[s * p..(s + 1) * p];
            let gxs = &mut gx[s * n..(s + 1) * n];
            for j in 0..p {
                gb[j] += g[j];
                let wrow = &wt[j * n..(j + 1) * n];
                let gwrow = &mut gw[j * n..(j + 1) * n];
                for i in 0..n {
                    gwrow[i] += g[j] * x[i];
                    gxs[i] += g[j] * wrow[i];
                }
            }
        }
        Ok(DenseGrads {
            input: Tensor::from_vec(input.dims(), gx)?,
            weights: Tensor::from_vec(&[p, n], gw)?,
            bias: Tensor::from_vec(&[p], gb)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_passthrough() {
        let w = Tensor::<f64>::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 }).unwrap();
        let layer = Dense::new(w, Tensor::zeros(&[3]).unwrap()).unwrap();
        let x = Tensor::from_vec(&[3], vec![0.5, -2.0, 9.0]).unwrap();
        assert_eq!(layer.forward(&x).unwrap(), x);
    }

    #[test]
    fn hand_arithmetic() {
        let layer = Dense::new(
            Tensor::<f64>::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap(),
            Tensor::from_vec(&[1], vec![3.0]).unwrap(),
        )
        .unwrap();
        let y = layer.forward(&Tensor::from_vec(&[2], vec![4.0, 5.0]).unwrap()).unwrap();
        assert_eq!(y.data(), &[17.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let layer = Dense::<f64>::new(Tensor::zeros(&[2, 3]).unwrap(), Tensor::zeros(&[2]).unwrap()).unwrap();
        assert_eq!(
            layer.forward(&Tensor::zeros(&[4]).unwrap()).unwrap_err(),
            LayerError::DimMismatch { expected: 3, got: 4 }
        );
    }
}
