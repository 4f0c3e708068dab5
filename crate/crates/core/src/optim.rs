//! Flat parameter buffers and the two optimizers the networks use.
//!
//! Parameters persist across training steps while tapes are rebuilt per
//! step. The flow is: bind parameters onto a fresh tape, run the loss,
//! call backward, pull the tape gradients back into the parameter
//! accumulators, then step. Gradients accumulate until the caller zeroes
//! them, so multi-episode accumulation works.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::error::{CoreError, Result};
use crate::math;
use crate::rng::Rng;
use crate::tensor::{Tape, TensorId};
use crate::Real;

/// A persistent, trainable buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub data: Vec<Real>,
    pub grad: Vec<Real>,
    pub shape: Vec<usize>,
}

impl Param {
    pub fn new(name: impl Into<String>, data: Vec<Real>, shape: Vec<usize>) -> Self {
        let grad = vec![0.0; data.len()];
        Param { name: name.into(), data, grad, shape }
    }

    /// Fan-in-scaled uniform init: entries drawn from
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn uniform_init(name: impl Into<String>, shape: Vec<usize>, fan_in: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / math::sqrt(fan_in.max(1) as Real);
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        Param::new(name, data, shape)
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Param::new(name, vec![0.0; n], shape)
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Bind each parameter as a differentiable leaf on `tape`.
pub fn bind(tape: &mut Tape, params: &[Param]) -> Result<Vec<TensorId>> {
    params
        .iter()
        .map(|p| tape.leaf(p.data.clone(), p.shape.clone(), true))
        .collect()
}

/// Add the tape gradients of `ids` into the parameter accumulators.
/// Parameters the loss never touched are left unchanged.
pub fn accumulate_grads(tape: &Tape, ids: &[TensorId], params: &mut [Param]) {
    debug_assert_eq!(ids.len(), params.len());
    for (id, p) in ids.iter().zip(params.iter_mut()) {
        if let Some(g) = tape.grad(*id) {
            for (acc, v) in p.grad.iter_mut().zip(g) {
                *acc += *v;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Optimizer state over a fixed parameter list. Adam keeps first/second
/// moment buffers per parameter; SGD keeps none.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub learning_rate: Real,
    pub step_count: u64,
    pub beta1: Real,
    pub beta2: Real,
    pub epsilon: Real,
    moments1: Vec<Vec<Real>>,
    moments2: Vec<Vec<Real>>,
}

impl Optimizer {
    pub fn sgd(learning_rate: Real) -> Self {
        Optimizer {
            kind: OptimizerKind::Sgd,
            learning_rate,
            step_count: 0,
            beta1: 0.0,
            beta2: 0.0,
            epsilon: 0.0,
            moments1: Vec::new(),
            moments2: Vec::new(),
        }
    }

    pub fn adam(learning_rate: Real) -> Self {
        Optimizer {
            kind: OptimizerKind::Adam,
            learning_rate,
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8 as Real,
            moments1: Vec::new(),
            moments2: Vec::new(),
        }
    }

    /// Apply one update using each parameter's accumulated gradient.
    /// Moment buffers are allocated lazily on the first step and must
    /// keep matching the parameter list afterwards.
    pub fn step(&mut self, params: &mut [Param]) -> Result<()> {
        if self.kind == OptimizerKind::Adam {
            if self.moments1.is_empty() {
                self.moments1 = params.iter().map(|p| vec![0.0; p.data.len()]).collect();
                self.moments2 = params.iter().map(|p| vec![0.0; p.data.len()]).collect();
            }
            if self.moments1.len() != params.len()
                || self
                    .moments1
                    .iter()
                    .zip(params.iter())
                    .any(|(m, p)| m.len() != p.data.len())
            {
                return Err(CoreError::invalid("optimizer state does not match parameter list"));
            }
        }
        self.step_count += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for p in params.iter_mut() {
                    for (x, g) in p.data.iter_mut().zip(&p.grad) {
                        *x -= self.learning_rate * g;
                    }
                }
            }
            OptimizerKind::Adam => {
                let t = self.step_count as i32;
                let bc1 = 1.0 - math::powf(self.beta1, t as Real);
                let bc2 = 1.0 - math::powf(self.beta2, t as Real);
                for (pi, p) in params.iter_mut().enumerate() {
                    let m = &mut self.moments1[pi];
                    let v = &mut self.moments2[pi];
                    for i in 0..p.data.len() {
                        let g = p.grad[i];
                        m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                        v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                        let m_hat = m[i] / bc1;
                        let v_hat = v[i] / bc2;
                        p.data[i] -= self.learning_rate * m_hat / (math::sqrt(v_hat) + self.epsilon);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn sgd_basic_step() {
        let mut p = Param::new("p", vec![1.0], vec![1]);
        p.grad = vec![2.0];
        let mut opt = Optimizer::sgd(0.1);
        opt.step(core::slice::from_mut(&mut p)).unwrap();
        assert!((p.data[0] - 0.8).abs() < 1e-12);
        assert_eq!(opt.step_count, 1);
    }

    #[test]
    fn adam_first_step_magnitude_is_lr() {
        // closed form: |dp| = lr * |g| / (|g| + eps) for the first step
        let mut p = Param::new("p", vec![0.5], vec![1]);
        p.grad = vec![3.7];
        let lr = 0.01;
        let mut opt = Optimizer::adam(lr);
        opt.step(core::slice::from_mut(&mut p)).unwrap();
        let expected = lr * 3.7 / (3.7 + 1e-8);
        assert!((0.5 - p.data[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = Param::new("p", vec![0.25, -4.0], vec![2]);
        let before = p.data.clone();
        let mut sgd = Optimizer::sgd(0.5);
        sgd.step(core::slice::from_mut(&mut p)).unwrap();
        assert_eq!(p.data, before);
        let mut adam = Optimizer::adam(0.5);
        adam.step(core::slice::from_mut(&mut p)).unwrap();
        assert_eq!(p.data, before);
    }

    #[test]
    fn seeded_runs_are_bit_identical() {
        let run = || {
            let mut r = rng::seeded(99);
            let mut p = Param::uniform_init("w", vec![4, 4], 4, &mut r);
            let mut opt = Optimizer::adam(1e-2);
            for step in 0..25u32 {
                for (i, g) in p.grad.iter_mut().enumerate() {
                    *g = ((i as Real) + 1.0) * 0.01 * (step as Real + 1.0);
                }
                opt.step(core::slice::from_mut(&mut p)).unwrap();
                p.zero_grad();
            }
            p.data
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
        // bit-level identity
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn uniform_init_respects_fan_in_bound() {
        let mut r = rng::seeded(1);
        let p = Param::uniform_init("w", vec![8, 16], 16, &mut r);
        let bound = 1.0 / (16.0 as Real).sqrt();
        assert!(p.data.iter().all(|v| v.abs() <= bound));
    }
}
