//! Nesterov accelerated gradient with a step-decayed learning rate, and the
//! mini-group accumulator that turns per-sample gradients into one update.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OptimError {
    #[error("gradient has length {got}, expected {expected}")]
    Length { expected: usize, got: usize },
    #[error("mini-group of size {capacity} would hold {would_hold} samples")]
    Overfill { capacity: usize, would_hold: usize },
    #[error("mini-group is empty")]
    Empty,
    #[error("invalid optimizer setting: {0}")]
    Invalid(String),
}

/// How the learning rate decays with the iteration count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    /// `mu0 * lambda^floor(t / t0)`.
    #[default]
    Staircase,
    /// `mu_{t+1} = mu_t * lambda^floor(t / t0)`, applied every iteration.
    Compounding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub momentum: f64,
    pub mu0: f64,
    pub lambda: f64,
    pub t0: u64,
    pub schedule: LrSchedule,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            momentum: 0.93,
            mu0: 0.01,
            lambda: 0.8,
            t0: 100,
            schedule: LrSchedule::Staircase,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<(), OptimError> {
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(OptimError::Invalid(format!("momentum {} not in [0, 1)", self.momentum)));
        }
        if !(self.mu0 > 0.0) {
            return Err(OptimError::Invalid(format!("mu0 {} must be positive", self.mu0)));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(OptimError::Invalid(format!("lambda {} not in (0, 1]", self.lambda)));
        }
        if self.t0 == 0 {
            return Err(OptimError::Invalid("t0 must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate used at iteration `t`.
    pub fn lr_at(&self, t: u64) -> f64 {
        match self.schedule {
            LrSchedule::Staircase => staircase_lr(self.mu0, self.lambda, self.t0, t),
            LrSchedule::Compounding => {
                let mut mu = self.mu0;
                for s in 0..t {
                    mu *= self.lambda.powi((s / self.t0) as i32);
                }
                mu
            }
        }
    }
}

pub fn staircase_lr(mu0: f64, lambda: f64, t0: u64, t: u64) -> f64 {
    mu0 * lambda.powi((t / t0) as i32)
}

/// Nesterov state: parameters `w`, velocity `v` and the iteration counter.
#[derive(Debug, Clone)]
pub struct Nesterov {
    pub config: OptimConfig,
    pub velocity: Vec<f64>,
    pub iteration: u64,
}

impl Nesterov {
    pub fn new(config: OptimConfig, num_params: usize) -> Self {
        Nesterov {
            config,
            velocity: vec![0.0; num_params],
            iteration: 0,
        }
    }

    /// Point at which the next gradient is evaluated: `w + m v`.
    pub fn lookahead(&self, params: &[f64]) -> Vec<f64> {
        let m = self.config.momentum;
        params.iter().zip(&self.velocity).map(|(w, v)| w + m * v).collect()
    }

    /// Applies `v <- m v - mu_t g`, `w <- w + v`, where `g` is the gradient at
    /// the lookahead point, and advances the iteration counter.
    pub fn apply(&mut self, params: &mut [f64], lookahead_grad: &[f64]) -> Result<(), OptimError> {
        for len in [params.len(), lookahead_grad.len()] {
            if len != self.velocity.len() {
                return Err(OptimError::Length {
                    expected: self.velocity.len(),
                    got: len,
                });
            }
        }
        let m = self.config.momentum;
        let mu = self.config.lr_at(self.iteration);
        for ((w, v), g) in params.iter_mut().zip(&mut self.velocity).zip(lookahead_grad) {
            *v = m * *v - mu * g;
            *w += *v;
        }
        self.iteration += 1;
        Ok(())
    }

    /// One full step with a gradient oracle evaluated at the lookahead point.
    pub fn step(&mut self, params: &mut [f64], grad: impl FnOnce(&[f64]) -> Vec<f64>) -> Result<(), OptimError> {
        let g = grad(&self.lookahead(params));
        self.apply(params, &g)
    }
}

/// Collects per-sample gradients until `capacity` samples have arrived, then
/// releases their mean.
#[derive(Debug, Clone)]
pub struct MiniGroupAccumulator {
    capacity: usize,
    sum: Vec<f64>,
    count: usize,
}

impl MiniGroupAccumulator {
    pub fn new(capacity: usize, num_params: usize) -> Result<Self, OptimError> {
        if capacity == 0 {
            return Err(OptimError::Invalid("mini-group size must be positive".into()));
        }
        Ok(MiniGroupAccumulator {
            capacity,
            sum: vec![0.0; num_params],
            count: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn is_full(&self) -> bool {
        self.count == self.capacity
    }

    /// Adds the summed gradient of `samples` samples.
    pub fn accumulate(&mut self, grad_sum: &[f64], samples: usize) -> Result<(), OptimError> {
        if grad_sum.len() != self.sum.len() {
            return Err(OptimError::Length {
                expected: self.sum.len(),
                got: grad_sum.len(),
            });
        }
        if self.count + samples > self.capacity {
            return Err(OptimError::Overfill {
                capacity: self.capacity,
                would_hold: self.count + samples,
            });
        }
        for (s, g) in self.sum.iter_mut().zip(grad_sum) {
            *s += g;
        }
        self.count += samples;
        Ok(())
    }

    /// Mean gradient over the collected samples; resets the accumulator.
    pub fn release(&mut self) -> Result<Vec<f64>, OptimError> {
        if self.count == 0 {
            return Err(OptimError::Empty);
        }
        let q = self.count as f64;
        let out = self.sum.iter().map(|s| s / q).collect();
        self.sum.iter_mut().for_each(|s| *s = 0.0);
        self.count = 0;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn staircase_examples() {
        let c = OptimConfig::default();
        assert_eq!(c.lr_at(0), 0.01);
        assert_eq!(c.lr_at(99), 0.01);
        assert!((c.lr_at(100) - 0.008).abs() < 1e-15);
        assert!((c.lr_at(250) - 0.0064).abs() < 1e-15);
    }

    #[test]
    fn compounding_differs_after_second_period() {
        let c = OptimConfig {
            schedule: LrSchedule::Compounding,
            ..OptimConfig::default()
        };
        assert_eq!(c.lr_at(100), 0.01);
        assert!((c.lr_at(101) - 0.008).abs() < 1e-15);
        assert!(c.lr_at(300) < staircase_lr(0.01, 0.8, 100, 300));
    }

    #[test]
    fn first_step_on_half_square() {
        let mut opt = Nesterov::new(OptimConfig::default(), 1);
        let mut w = vec![1.0];
        opt.step(&mut w, |x| x.to_vec()).unwrap();
        assert!((opt.velocity[0] + 0.01).abs() < 1e-15);
        assert!((w[0] - 0.99).abs() < 1e-15);
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = OptimConfig {
            momentum: 1.0,
            ..OptimConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = OptimConfig {
            t0: 0,
            ..OptimConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(OptimConfig::default().validate().is_ok());
    }

    #[test]
    fn accumulator_overfill_and_empty() {
        let mut acc = MiniGroupAccumulator::new(2, 1).unwrap();
        assert_eq!(acc.release(), Err(OptimError::Empty));
        acc.accumulate(&[1.0], 1).unwrap();
        acc.accumulate(&[3.0], 1).unwrap();
        assert!(acc.is_full());
        assert!(matches!(acc.accumulate(&[1.0], 1), Err(OptimError::Overfill { .. })));
        assert_eq!(acc.release().unwrap(), vec![2.0]);
        assert_eq!(acc.count(), 0);
    }

    proptest! {
        #[test]
        fn staircase_is_monotone_and_piecewise_constant(t in 0u64..5000) {
            let c = OptimConfig::default();
            prop_assert!(c.lr_at(t + 1) <= c.lr_at(t));
            if (t + 1) % 100 != 0 {
                prop_assert_eq!(c.lr_at(t + 1), c.lr_at(t));
            }
        }

        #[test]
        fn accumulator_mean_is_order_free(grads in proptest::collection::vec(-10.0f64..10.0, 1..20)) {
            let mut a = MiniGroupAccumulator::new(grads.len(), 1).unwrap();
            let mut b = MiniGroupAccumulator::new(grads.len(), 1).unwrap();
            for g in &grads { a.accumulate(&[*g], 1).unwrap(); }
            for g in grads.iter().rev() { b.accumulate(&[*g], 1).unwrap(); }
            let (x, y) = (a.release().unwrap()[0], b.release().unwrap()[0]);
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}
