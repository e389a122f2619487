// SPDX-License-Identifier: Apache-2.0

use crate::{Grads, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// AdamW moments for every parameter of one store.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(store: &ParamStore, config: AdamWConfig) -> Self {
        let zeros = |store: &ParamStore| {
            store
                .iter()
                .map(|(_, p)| Tensor::zeros(p.tensor.rows(), p.tensor.cols()))
                .collect()
        };
        OptimizerState {
            config,
            step: 0,
            m: zeros(store),
            v: zeros(store),
        }
    }

    pub fn first_moment(&self, index: usize) -> &Tensor {
        &self.m[index]
    }

    pub fn second_moment(&self, index: usize) -> &Tensor {
        &self.v[index]
    }

    /// One AdamW update with decoupled weight decay. Frozen parameters are
    /// left untouched; parameters without a gradient see a zero gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let AdamWConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for id in ids {
            let param = store.get_mut(id);
            if param.frozen {
                continue;
            }
            let (rows, cols) = (param.tensor.rows(), param.tensor.cols());
            let grad = grads.get(id).map(|g| g.to_dense(rows, cols));
            let m = self.m[id.index()].data_mut();
            let v = self.v[id.index()].data_mut();
            let theta = param.tensor.data_mut();
            for k in 0..theta.len() {
                let g = grad.as_ref().map_or(0.0, |g| g.data()[k]);
                m[k] = beta1 * m[k] + (1.0 - beta1) * g;
                v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                theta[k] -= lr * (m_hat / (v_hat.sqrt() + eps) + weight_decay * theta[k]);
            }
        }
    }
}

/// Learning rate ramped linearly from 0 to `base_lr` over the first
/// `round(warmup_frac · total)` steps and held constant afterwards.
pub fn linear_warmup_lr(step: usize, total: usize, base_lr: f64, warmup_frac: f64) -> f64 {
    let warmup = (warmup_frac.clamp(0.0, 1.0) * total as f64).round() as usize;
    if warmup == 0 || step >= warmup {
        base_lr
    } else {
        base_lr * step as f64 / warmup as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{Graph, Mode};

    #[test]
    fn warmup_ramp() {
        assert_eq!(linear_warmup_lr(0, 100, 5e-4, 0.1), 0.0);
        assert_eq!(linear_warmup_lr(10, 100, 5e-4, 0.1), 5e-4);
        assert!((linear_warmup_lr(5, 100, 5e-4, 0.1) - 2.5e-4).abs() < 1e-18);
        assert_eq!(linear_warmup_lr(99, 100, 5e-4, 0.1), 5e-4);
        assert_eq!(linear_warmup_lr(0, 100, 5e-4, 0.0), 5e-4);
    }

    #[test]
    fn one_step_on_a_scalar_quadratic() {
        // f(θ) = (θ - 3)², θ0 = 1  =>  g = 2(θ0 - 3) = -4
        let mut store = ParamStore::new();
        let id = store.add_tensor("theta", Tensor::row_vector(&[1.0]));
        let grads = {
            let mut g = Graph::new(&store, Mode::Train, 0);
            let th = g.param(id);
            let three = g.input(Tensor::row_vector(&[3.0]));
            let d = g.sub(th, three).unwrap();
            let sq = g.mul(d, d).unwrap();
            let loss = g.sum(sq);
            g.backward(loss).unwrap()
        };
        let cfg = AdamWConfig::default();
        let mut opt = OptimizerState::new(&store, cfg);
        let lr = 0.1;
        opt.step(&mut store, &grads, lr);
        // hand update
        let g = -4.0;
        let m = (1.0 - cfg.beta1) * g;
        let v = (1.0 - cfg.beta2) * g * g;
        let m_hat = m / (1.0 - cfg.beta1);
        let v_hat = v / (1.0 - cfg.beta2);
        let want = 1.0 - lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * 1.0);
        assert!((store.value(id).scalar() - want).abs() < 1e-15);
        assert!((opt.first_moment(0).scalar() - m).abs() < 1e-15);
        assert!((opt.second_moment(0).scalar() - v).abs() < 1e-15);
    }

    #[test]
    fn frozen_parameters_do_not_move() {
        let mut store = ParamStore::new();
        let id = store.add_tensor("w", Tensor::row_vector(&[0.5, -0.5]));
        store.get_mut(id).frozen = true;
        let before = store.digest();
        let mut opt = OptimizerState::new(&store, AdamWConfig::default());
        opt.step(&mut store, &Grads::default(), 1.0);
        assert_eq!(before, store.digest());
    }
}
