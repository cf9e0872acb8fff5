use rand::Rng;

use super::{LayerError, Phase};
use crate::tensor::{Real, Tensor};

/// Saved per-element multipliers: `0` for dropped, `1 / (1 - p)` for kept.
#[derive(Debug, Clone)]
pub struct DropoutMask<T> {
    scale: Vec<T>,
}

/// Inverted dropout. Identity in the infer phase or when `rate == 0`.
pub fn dropout_forward<T: Real, R: Rng + ?Sized>(
    input: &Tensor<T>,
    rate: f64,
    phase: Phase,
    rng: &mut R,
) -> Result<(Tensor<T>, DropoutMask<T>), LayerError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(LayerError::InvalidRate(rate));
    }
    if phase == Phase::Infer || rate == 0.0 {
        return Ok((
            input.clone(),
            DropoutMask {
                scale: vec![T::one(); input.len()],
            },
        ));
    }
    let keep = T::lit(1.0 / (1.0 - rate));
    let scale: Vec<T> = (0..input.len())
        .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
        .collect();
    let mut out = input.clone();
    for (o, &s) in out.data_mut().iter_mut().zip(&scale) {
        *o *= s;
    }
    Ok((out, DropoutMask { scale }))
}

pub fn dropout_backward<T: Real>(mask: &DropoutMask<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>, LayerError> {
    if mask.scale.len() != grad_out.len() {
        return Err(LayerError::DimMismatch {
            expected: mask.scale.len(),
            got: grad_out.len(),
        });
    }
    let mut g = grad_out.clone();
    for (gv, &s) in g.data_mut().iter_mut().zip(&mask.scale) {
        *gv *= s;
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::sample_rng;

    #[test]
    fn zero_rate_and_infer_are_identity() {
        let x = Tensor::<f64>::from_fn(&[16], |i| i as f64 - 3.0).unwrap();
        let mut rng = sample_rng(1, 0);
        for phase in [Phase::Train, Phase::Infer] {
            assert_eq!(dropout_forward(&x, 0.0, phase, &mut rng).unwrap().0, x);
        }
        assert_eq!(dropout_forward(&x, 0.7, Phase::Infer, &mut rng).unwrap().0, x);
    }

    #[test]
    fn rate_one_rejected() {
        let x = Tensor::<f64>::zeros(&[2]).unwrap();
        let mut rng = sample_rng(1, 0);
        assert_eq!(
            dropout_forward(&x, 1.0, Phase::Train, &mut rng).unwrap_err(),
            LayerError::InvalidRate(1.0)
        );
    }

    #[test]
    fn monte_carlo_expectation_matches_input() {
        let x = Tensor::<f64>::from_vec(&[4], vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let draws = 10_000;
        let mut acc = [0.0f64; 4];
        for i in 0..draws {
            let mut rng = sample_rng(42, i);
            let (y, _) = dropout_forward(&x, 0.5, Phase::Train, &mut rng).unwrap();
            for (a, &v) in acc.iter_mut().zip(y.data()) {
                *a += v;
            }
        }
        for (a, &v) in acc.iter().zip(x.data()) {
            let mean = a / draws as f64;
            assert!((mean - v).abs() <= 0.02 * v.abs(), "mean {mean} vs {v}");
        }
    }

    #[test]
    fn backward_applies_saved_mask() {
        let x = Tensor::<f64>::full(&[32], 1.0).unwrap();
        let mut rng = sample_rng(9, 3);
        let (y, mask) = dropout_forward(&x, 0.3, Phase::Train, &mut rng).unwrap();
        let g = dropout_backward(&mask, &x).unwrap();
        assert_eq!(g, y);
    }
}
