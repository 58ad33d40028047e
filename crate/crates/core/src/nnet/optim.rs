//! Parameter updates: plain SGD and Adam.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::tensor::{Gradients, ParameterStore, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::Config(format!("unknown optimizer {other:?} (expected sgd or adam)"))),
        }
    }
}

pub const ADAM_BETA1: f32 = 0.9;
pub const ADAM_BETA2: f32 = 0.999;
pub const ADAM_EPS: f32 = 1e-8;

/// Optimizer state. Adam moments are allocated on the first step.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    moments: Option<(Vec<Tensor<f32>>, Vec<Tensor<f32>>)>,
    steps: u32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Self {
            kind,
            moments: None,
            steps: 0,
        }
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    pub fn step(&mut self, params: &mut ParameterStore<f32>, grads: &Gradients<f32>, lr: f32) -> Result<()> {
        if grads.names() != params.names() {
            return Err(Error::Shape("gradient store does not match parameters".into()));
        }
        self.steps += 1;
        match self.kind {
            OptimizerKind::Sgd => params.add_scaled(-lr, grads),
            OptimizerKind::Adam => {
                let (m, v) = self.moments.get_or_insert_with(|| {
                    let zeros: Vec<_> = grads.iter().map(|(_, g)| Tensor::zeros(g.shape())).collect();
                    (zeros.clone(), zeros)
                });
                let t = self.steps as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                for id in 0..params.len() {
                    let g = grads.tensor(id).data();
                    let (mi, vi) = (m[id].data_mut(), v[id].data_mut());
                    let p = params.tensor_mut(id).data_mut();
                    for j in 0..g.len() {
                        mi[j] = ADAM_BETA1 * mi[j] + (1.0 - ADAM_BETA1) * g[j];
                        vi[j] = ADAM_BETA2 * vi[j] + (1.0 - ADAM_BETA2) * g[j] * g[j];
                        let mhat = mi[j] / c1;
                        let vhat = vi[j] / c2;
                        p[j] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
                    }
                    if !p.iter().all(|x| x.is_finite()) {
                        return Err(Error::NonFinite(format!("parameter {} after update", params.name(id))));
                    }
                }
                Ok(())
            }
        }
    }
}
