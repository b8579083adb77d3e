//! Adam with bias correction and coupled (L2) weight decay.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::params::ParamSet;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Added to the gradient as `weight_decay * param`.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self::base_training()
    }
}

impl AdamConfig {
    /// Source-domain training: lr 5e-5, decay 5e-4.
    pub fn base_training() -> Self {
        Self { lr: 5e-5, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 5e-4 }
    }

    /// Adaptation to the target domain: lr 5e-5, decay 1e-4.
    pub fn fine_tuning() -> Self {
        Self { weight_decay: 1e-4, ..Self::base_training() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    pub moments: BTreeMap<String, Moments>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, t: 0, moments: BTreeMap::new() }
    }

    /// One update of every tensor whose name passes `trainable`; other tensors
    /// are not touched.
    pub fn step<P: ParamSet>(&mut self, params: &mut P, grads: &P, trainable: impl Fn(&str) -> bool) {
        let mut g_by_name: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        grads.visit(&mut |n, g| {
            if trainable(n) {
                g_by_name.insert(n.to_string(), g.to_vec());
            }
        });
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps, weight_decay } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let moments = &mut self.moments;
        params.visit_mut(&mut |name, p| {
            let Some(g) = g_by_name.get(name) else { return };
            let mo = moments.entry(name.to_string()).or_insert_with(|| Moments {
                m: vec![0.0; p.len()],
                v: vec![0.0; p.len()],
            });
            for i in 0..p.len() {
                let gi = g[i] + weight_decay * p[i];
                mo.m[i] = beta1 * mo.m[i] + (1.0 - beta1) * gi;
                mo.v[i] = beta2 * mo.v[i] + (1.0 - beta2) * gi * gi;
                let mhat = mo.m[i] / bc1;
                let vhat = mo.v[i] / bc2;
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        });
    }
}
