//! Adam optimizer.

use alloc::vec;
use alloc::vec::Vec;


use crate::error::{Error, Result};
use crate::model::Param;

/// Adam with bias correction. Slots are allocated lazily on the first step
/// and keyed by registry position, so the parameter order must stay fixed
/// across steps (it does: the registry is name-sorted at build time).
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
    step: u64,
    slots: Vec<Slot>,
}

#[derive(Debug, Clone)]
struct Slot {
    m: Vec<f32>,
    v: Vec<f32>,
}

impl Adam {
    pub fn new(learning_rate: f32) -> Self {
        Adam { learning_rate, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, step: 0, slots: Vec::new() }
    }

    /// Applies one update. `grads[i]` is the gradient of `params[i]`.
    pub fn step(&mut self, params: &mut [Param], grads: &[&[f32]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::contract(
                "adam_step",
                alloc::format!("{} params vs {} grads", params.len(), grads.len()),
            ));
        }
        if self.slots.is_empty() {
            self.slots = params
                .iter()
                .map(|p| Slot { m: vec![0.0; p.value.numel()], v: vec![0.0; p.value.numel()] })
                .collect();
        }
        if self.slots.len() != params.len() {
            return Err(Error::contract("adam_step", "parameter set changed between steps"));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((param, grad), slot) in params.iter_mut().zip(grads).zip(&mut self.slots) {
            if param.value.numel() != grad.len() {
                return Err(Error::contract(
                    "adam_step",
                    alloc::format!("gradient length mismatch for '{}'", param.name),
                ));
            }
            let data = param.value.data_mut();
            for i in 0..data.len() {
                let g = grad[i];
                slot.m[i] = self.beta1 * slot.m[i] + (1.0 - self.beta1) * g;
                slot.v[i] = self.beta2 * slot.v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = slot.m[i] / bc1;
                let v_hat = slot.v[i] / bc2;
                data[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Param;
    use crate::tensor::Tensor;
    use alloc::string::ToString;
    use alloc::vec;

    #[test]
    fn first_step_moves_by_learning_rate() {
        // With bias correction, step 1 moves each coordinate by ~lr * sign(g).
        let mut params = vec![Param {
            name: "p".to_string(),
            value: Tensor::from_vec(&[2], vec![1.0f32, -2.0]).unwrap(),
        }];
        let grads: Vec<f32> = vec![0.5, -0.25];
        let mut adam = Adam::new(0.01);
        adam.step(&mut params, &[&grads]).unwrap();
        let got = params[0].value.data();
        assert!((got[0] - (1.0 - 0.01)).abs() < 1e-5, "{got:?}");
        assert!((got[1] - (-2.0 + 0.01)).abs() < 1e-5, "{got:?}");
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut params = vec![Param {
            name: "x".to_string(),
            value: Tensor::from_vec(&[1], vec![3.0f32]).unwrap(),
        }];
        let mut adam = Adam::new(0.1);
        for _ in 0..200 {
            let x = params[0].value.data()[0];
            let grad = vec![2.0 * x];
            adam.step(&mut params, &[&grad]).unwrap();
        }
        assert!(params[0].value.data()[0].abs() < 0.05);
    }
}
