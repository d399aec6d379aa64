use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Gradients, ParamSet, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam (with bias correction) or plain SGD.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, params: &ParamSet) -> Self {
        let moments = || -> Vec<Tensor> {
            match kind {
                OptimizerKind::Adam { .. } => {
                    params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect()
                }
                OptimizerKind::Sgd => Vec::new(),
            }
        };
        Self {
            kind,
            lr,
            step: 0,
            first: moments(),
            second: moments(),
        }
    }

    pub fn adam(lr: f64, params: &ParamSet) -> Self {
        Self::new(OptimizerKind::default(), lr, params)
    }

    pub fn sgd(lr: f64, params: &ParamSet) -> Self {
        Self::new(OptimizerKind::Sgd, lr, params)
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::Dimension(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (id, g) in params.ids().zip(grads.iter()) {
            if params.get(id).shape() != g.shape() {
                return Err(Error::Dimension(format!(
                    "parameter `{}` is {:?} but gradient is {:?}",
                    params.name(id),
                    params.get(id).shape(),
                    g.shape()
                )));
            }
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (id, g) in params.ids().collect::<Vec<_>>().into_iter().zip(grads.iter()) {
                    for (p, gv) in params.get_mut(id).data_mut().iter_mut().zip(g.data()) {
                        *p -= self.lr * gv;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let ids: Vec<_> = params.ids().collect();
                for ((id, g), (m, v)) in ids
                    .into_iter()
                    .zip(grads.iter())
                    .zip(self.first.iter_mut().zip(self.second.iter_mut()))
                {
                    let p = params.get_mut(id).data_mut();
                    for (((pv, &gv), mv), vv) in p
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.data_mut())
                        .zip(v.data_mut())
                    {
                        *mv = beta1 * *mv + (1.0 - beta1) * gv;
                        *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                        let m_hat = *mv / c1;
                        let v_hat = *vv / c2;
                        *pv -= self.lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
