//! Adaptive-moment optimizer with bias correction.

use nalgebra::{DMatrix, DVector};

use super::backprop::ModelGrads;
use crate::jets::MlpModel;

const EPS: f64 = 1e-8;

/// First/second moment accumulators mirroring a model's parameters.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    m_weights: Vec<DMatrix<f64>>,
    m_biases: Vec<DVector<f64>>,
    v_weights: Vec<DMatrix<f64>>,
    v_biases: Vec<DVector<f64>>,
    step: u64,
}

impl OptimizerState {
    pub fn new(model: &MlpModel) -> OptimizerState {
        let zw: Vec<DMatrix<f64>> = (0..model.num_layers())
            .map(|l| DMatrix::zeros(model.weight(l).nrows(), model.weight(l).ncols()))
            .collect();
        let zb: Vec<DVector<f64>> = (0..model.num_layers())
            .map(|l| DVector::zeros(model.bias(l).len()))
            .collect();
        OptimizerState {
            m_weights: zw.clone(),
            m_biases: zb.clone(),
            v_weights: zw,
            v_biases: zb,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One decayed-moment update of every parameter.
    pub fn step(
        &mut self,
        model: &mut MlpModel,
        grads: &ModelGrads,
        learning_rate: f64,
        decay: [f64; 2],
    ) {
        self.step += 1;
        let [b1, b2] = decay;
        let corr1 = 1.0 - b1.powi(self.step as i32);
        let corr2 = 1.0 - b2.powi(self.step as i32);
        for l in 0..model.num_layers() {
            {
                let g = &grads.weights[l];
                let m = &mut self.m_weights[l];
                let v = &mut self.v_weights[l];
                let w = model.weight_mut(l);
                for i in 0..g.len() {
                    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                    v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                    let m_hat = m[i] / corr1;
                    let v_hat = v[i] / corr2;
                    w[i] -= learning_rate * m_hat / (v_hat.sqrt() + EPS);
                }
            }
            {
                let g = &grads.biases[l];
                let m = &mut self.m_biases[l];
                let v = &mut self.v_biases[l];
                let b = model.bias_mut(l);
                for i in 0..g.len() {
                    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                    v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                    let m_hat = m[i] / corr1;
                    let v_hat = v[i] / corr2;
                    b[i] -= learning_rate * m_hat / (v_hat.sqrt() + EPS);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jets::Role;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn step_counter_increases_and_moves_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut model = MlpModel::random(vec![2, 3, 2], Role::Decoder, &mut rng).unwrap();
        let before = model.get_param(0);
        let mut grads = ModelGrads::zeros_like(&model);
        grads.weights[0][(0, 0)] = 1.0;
        let mut opt = OptimizerState::new(&model);
        opt.step(&mut model, &grads, 1e-2, [0.9, 0.999]);
        assert_eq!(opt.step_count(), 1);
        // First step moves the touched parameter by about the learning rate.
        assert!((model.get_param(0) - (before - 1e-2)).abs() < 1e-6);
        opt.step(&mut model, &grads, 1e-2, [0.9, 0.999]);
        assert_eq!(opt.step_count(), 2);
    }
}
