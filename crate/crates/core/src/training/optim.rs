use serde::{Deserialize, Serialize};

use crate::autograd::{Gradients, Tensor};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl OptimizerKind {
    pub fn default_learning_rate(self) -> f64 {
        match self {
            OptimizerKind::Adam => 1e-3,
            OptimizerKind::Sgd => 1e-2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First-order optimiser over the trainable tensors of a store.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub adam: AdamConfig,
    ids: Vec<ParamId>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, store: &ParamStore) -> Result<Self> {
        if !(learning_rate > 0.0) || !learning_rate.is_finite() {
            return Err(Error::invalid(format!("learning rate must be positive, got {learning_rate}")));
        }
        let ids: Vec<ParamId> = store.trainable_ids().collect();
        let (m, v) = match kind {
            OptimizerKind::Adam => (
                ids.iter().map(|&id| Tensor::zeros(store.get(id).raw_dim())).collect(),
                ids.iter().map(|&id| Tensor::zeros(store.get(id).raw_dim())).collect(),
            ),
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
        };
        Ok(Optimizer {
            kind,
            learning_rate,
            adam: AdamConfig::default(),
            ids,
            m,
            v,
            t: 0,
        })
    }

    /// Parameters without a gradient (not reached by the loss) are left alone.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.t += 1;
        let lr = self.learning_rate;
        for (k, &id) in self.ids.iter().enumerate() {
            let Some(g) = grads.param(id) else { continue };
            match self.kind {
                OptimizerKind::Sgd => store.get_mut(id).scaled_add(-lr, g),
                OptimizerKind::Adam => {
                    let AdamConfig { beta1, beta2, epsilon } = self.adam;
                    let (m, v) = (&mut self.m[k], &mut self.v[k]);
                    m.zip_mut_with(g, |m, &g| *m = beta1 * *m + (1.0 - beta1) * g);
                    v.zip_mut_with(g, |v, &g| *v = beta2 * *v + (1.0 - beta2) * g * g);
                    let c1 = 1.0 - beta1.powi(self.t);
                    let c2 = 1.0 - beta2.powi(self.t);
                    let p = store.get_mut(id);
                    ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|p, &m, &v| {
                        *p -= lr * (m / c1) / ((v / c2).sqrt() + epsilon);
                    });
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Graph;
    use crate::params::filled;

    fn quadratic_step(kind: OptimizerKind, lr: f64) -> f64 {
        let mut store = ParamStore::new();
        let id = store.add("x", filled(&[1], 3.0));
        let mut opt = Optimizer::new(kind, lr, &store).unwrap();
        let grads = {
            let mut g = Graph::new(&store);
            let x = g.param(id);
            let sq = g.mul(x, x).unwrap();
            let s = g.reshape(sq, &[]).unwrap();
            g.backward(s)
        };
        opt.step(&mut store, &grads);
        store.get(id)[[0]]
    }

    #[test]
    fn sgd_and_adam_first_steps() {
        assert!((quadratic_step(OptimizerKind::Sgd, 0.1) - (3.0 - 0.1 * 6.0)).abs() < 1e-12);
        // first Adam step moves by lr regardless of gradient scale
        assert!((quadratic_step(OptimizerKind::Adam, 0.01) - 2.99).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_rate() {
        let store = ParamStore::new();
        assert!(Optimizer::new(OptimizerKind::Adam, 0.0, &store).is_err());
        assert!(Optimizer::new(OptimizerKind::Sgd, f64::NAN, &store).is_err());
    }
}
