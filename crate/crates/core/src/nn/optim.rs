//! SGD and Adam over the flat trainable-parameter vector.

use crate::nn::{Gradients, Network};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    /// Adam with the usual (0.9, 0.999, 1e−8) constants.
    pub fn adam_default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second-moment buffers live in the same flat order as
/// [`Network::params_flat`], so they always shape-match the parameters.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step_count: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, net: &Network) -> Self {
        let n = net.num_params();
        Optimizer {
            kind,
            lr,
            step_count: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn step(&mut self, net: &mut Network, grads: &Gradients) {
        let g = grads.to_flat();
        assert_eq!(g.len(), self.m.len(), "gradient size vs moment buffers");
        let mut theta = net.params_flat();
        self.step_count += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (t, gi) in theta.iter_mut().zip(&g) {
                    *t -= self.lr * gi;
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.step_count as i32;
                let bc1 = 1.0 - beta1.powi(t);
                let bc2 = 1.0 - beta2.powi(t);
                for i in 0..theta.len() {
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g[i];
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g[i] * g[i];
                    let m_hat = self.m[i] / bc1;
                    let v_hat = self.v[i] / bc2;
                    theta[i] -= self.lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        net.set_params_flat(&theta);
    }
}
