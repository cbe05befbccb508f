use serde::{Deserialize, Serialize};

use super::dense::{DenseNet, NetGrads};
use super::tensor::Scalar;
use crate::{Error, Result};

/// Adam with bias correction. Moments are kept in f64 regardless of the
/// parameter type so long runs do not lose small gradient contributions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    /// Defaults follow the framework the training recipe was specified
    /// against: beta1 = 0.9, beta2 = 0.999, epsilon = 1e-7.
    pub fn new(param_count: usize, learning_rate: f64) -> Self {
        AdamState {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over a flat parameter slice.
    pub fn step<T: Scalar>(&mut self, params: &mut [T], grads: &[T]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::contract(format!(
                "adam buffers hold {} parameters, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i].to_f64();
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            let delta = self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            params[i] = T::from_f64(params[i].to_f64() - delta);
        }
        Ok(())
    }

    /// Apply one step to a whole network given its structured gradients.
    pub fn step_net<T: Scalar>(&mut self, net: &mut DenseNet<T>, grads: &NetGrads<T>) -> Result<()> {
        let mut flat_params: Vec<T> = Vec::with_capacity(self.m.len());
        net.visit_params_mut(|sl| flat_params.extend_from_slice(sl));
        let mut flat_grads: Vec<T> = Vec::with_capacity(self.m.len());
        grads.visit(|g| flat_grads.extend_from_slice(g));
        self.step(&mut flat_params, &flat_grads)?;
        let mut offset = 0;
        net.visit_params_mut(|sl| {
            sl.copy_from_slice(&flat_params[offset..offset + sl.len()]);
            offset += sl.len();
        });
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_identity() {
        let mut adam = AdamState::new(4, 3e-4);
        let mut params = [1.0f64, -2.0, 0.5, 0.0];
        let before = params;
        adam.step(&mut params, &[0.0; 4]).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn first_step_magnitude_is_learning_rate() {
        // With bias correction, a constant gradient g gives |delta| ≈ lr at
        // step 1 (m_hat = g, v_hat = g²).
        let lr = 3e-4;
        let mut adam = AdamState::new(2, lr);
        let mut params = [0.0f64, 10.0];
        adam.step(&mut params, &[5.0, -0.01]).unwrap();
        assert!((params[0] + lr).abs() < 1e-8, "got {}", params[0]);
        assert!((params[1] - 10.0 - lr).abs() < 1e-8, "got {}", params[1]);
    }

    #[test]
    fn quadratic_bowl_converges() {
        // minimize f(x) = 0.5 * |x|², gradient x
        let mut adam = AdamState::new(3, 0.05);
        let mut x = [4.0f64, -3.0, 2.0];
        let mut losses = Vec::new();
        for _ in 0..600 {
            let g = x;
            losses.push(0.5 * x.iter().map(|v| v * v).sum::<f64>());
            adam.step(&mut x, &g).unwrap();
        }
        // monotone descent after warmup until the step-size floor (~lr per
        // coordinate) is reached, then stays small
        let floor = 3.0 * 0.05f64.powi(2);
        let hit = losses.iter().skip(50).position(|l| *l < floor).expect("reaches floor") + 50;
        for w in losses[50..=hit].windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "not monotone before the floor");
        }
        assert!(losses[50..].iter().all(|l| *l < losses[49]));
        assert!(losses.last().unwrap() < &1e-2);
    }

    #[test]
    fn shape_mismatch_is_contract_error() {
        let mut adam = AdamState::new(3, 1e-3);
        let mut params = [0.0f64; 2];
        assert!(matches!(adam.step(&mut params, &[0.0; 2]), Err(Error::Contract(_))));
    }
}
