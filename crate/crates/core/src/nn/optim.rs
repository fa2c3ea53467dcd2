//! SGD with momentum and Adam.
//!
//! Weight decay is coupled L2: `weight_decay * w` is added to the gradient
//! of weight tensors (never biases) before the update rule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerKind {
    SgdMomentum {
        #[serde(default = "default_momentum")]
        momentum: f64,
    },
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_momentum() -> f64 {
    0.9
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn sgd(momentum: f64) -> Self {
        OptimizerKind::SgdMomentum { momentum }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            OptimizerKind::SgdMomentum { momentum } => (0.0..1.0).contains(&momentum),
            OptimizerKind::Adam { beta1, beta2, eps } => {
                (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    kind: OptimizerKind,
    weight_decay: f64,
    /// Velocity (SGD) or first moment (Adam).
    first: Vec<Tensor>,
    /// Second moment (Adam only).
    second: Vec<Tensor>,
    step_count: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, weight_decay: f64, params: &[&Tensor]) -> Result<Self> {
        kind.validate()?;
        if !(weight_decay >= 0.0) {
            return Err(Error::Config(format!("weight decay {weight_decay} must be >= 0")));
        }
        let first = params.iter().map(|p| p.zeros_like()).collect();
        let second = match kind {
            OptimizerKind::Adam { .. } => params.iter().map(|p| p.zeros_like()).collect(),
            OptimizerKind::SgdMomentum { .. } => Vec::new(),
        };
        Ok(Optimizer {
            kind,
            weight_decay,
            first,
            second,
            step_count: 0,
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn weight_decay(&self) -> f64 {
        self.weight_decay
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One update with learning rate `lr`. `decay[i]` marks tensors that get
    /// weight decay.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], decay: &[bool], lr: f64) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() || decay.len() != params.len() {
            return Err(Error::Shape(format!(
                "optimizer holds {} slots, got {} parameters and {} gradients",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.first[i].shape() {
                return Err(Error::Shape(format!(
                    "parameter {i}: shape {:?}, gradient {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
            if let Some(j) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient {} in parameter {i} at element {j} (step {})",
                    g.data()[j],
                    self.step_count
                )));
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        for (i, p) in params.iter_mut().enumerate() {
            let wd = if decay[i] { self.weight_decay } else { 0.0 };
            let g = grads[i].data();
            let w = p.data_mut();
            match self.kind {
                OptimizerKind::SgdMomentum { momentum } => {
                    let v = self.first[i].data_mut();
                    for j in 0..w.len() {
                        v[j] = momentum * v[j] + (g[j] + wd * w[j]);
                        w[j] -= lr * v[j];
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    let m = self.first[i].data_mut();
                    let v = self.second[i].data_mut();
                    for j in 0..w.len() {
                        let gj = g[j] + wd * w[j];
                        m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                        v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                        let mh = m[j] / c1;
                        let vh = v[j] / c2;
                        w[j] -= lr * mh / (vh.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
