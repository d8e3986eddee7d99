use serde::{Deserialize, Serialize};

use crate::policy::{PolicyGrad, ToyPolicy};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// Plain gradient descent.
    #[default]
    Sgd,
    /// Adam with the usual (0.9, 0.999, 1e-8) moments.
    Adam,
}

/// First-order optimizer over the flattened policy parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub step_size: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl Optimizer {
    pub fn new(kind: OptimizerKind, step_size: f64) -> Self {
        Self { kind, step_size, m: Vec::new(), v: Vec::new(), t: 0 }
    }

    pub fn step(&mut self, p: &mut ToyPolicy, g: &PolicyGrad) {
        match self.kind {
            OptimizerKind::Sgd => p.apply(g, self.step_size),
            OptimizerKind::Adam => {
                let n = g.weights.len() + g.value_weights.len();
                if self.m.len() != n {
                    self.m = vec![0.0; n];
                    self.v = vec![0.0; n];
                    self.t = 0;
                }
                self.t += 1;
                let c1 = 1.0 - BETA1.powi(self.t);
                let c2 = 1.0 - BETA2.powi(self.t);
                let params = p.weights.iter_mut().chain(p.value_weights.iter_mut());
                let grads = g.weights.iter().chain(&g.value_weights);
                for (((w, gi), m), v) in params.zip(grads).zip(&mut self.m).zip(&mut self.v) {
                    *m = BETA1 * *m + (1.0 - BETA1) * gi;
                    *v = BETA2 * *v + (1.0 - BETA2) * gi * gi;
                    *w -= self.step_size * (*m / c1) / ((*v / c2).sqrt() + EPS);
                }
            }
        }
    }
}
