//! First-order optimizers with serializable state.

use std::collections::HashMap;

use candle_core::{backprop::GradStore, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Rmsprop,
}

/// Adam or RMSProp over a fixed list of named variables.
#[derive(Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    steps: u64,
    vars: Vec<(String, Var)>,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, vars: &[(String, Var)], lr: f64) -> Result<Self> {
        let zeros = |v: &Var| v.as_tensor().zeros_like();
        let first = vars.iter().map(|(_, v)| zeros(v)).collect::<candle_core::Result<Vec<_>>>()?;
        let second = vars.iter().map(|(_, v)| zeros(v)).collect::<candle_core::Result<Vec<_>>>()?;
        let (beta1, beta2, eps) = match kind {
            OptimizerKind::Adam => (0.9, 0.999, 1e-8),
            OptimizerKind::Rmsprop => (0.0, 0.99, 1e-8),
        };
        Ok(Optimizer {
            kind,
            lr,
            beta1,
            beta2,
            eps,
            steps: 0,
            vars: vars.to_vec(),
            first,
            second,
        })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, grads: &GradStore) -> Result<()> {
        self.steps += 1;
        let t = self.steps as i32;
        for (i, (_, var)) in self.vars.iter().enumerate() {
            let Some(g) = grads.get(var.as_tensor()).map(Tensor::detach) else {
                continue;
            };
            let g = &g;
            let v = ((&self.second[i] * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?;
            let update = match self.kind {
                OptimizerKind::Adam => {
                    let m = ((&self.first[i] * self.beta1)? + (g * (1.0 - self.beta1))?)?;
                    let m_hat = (&m / (1.0 - self.beta1.powi(t)))?;
                    let v_hat = (&v / (1.0 - self.beta2.powi(t)))?;
                    self.first[i] = m;
                    (m_hat / (v_hat.sqrt()? + self.eps)?)?
                }
                OptimizerKind::Rmsprop => (g / (v.sqrt()? + self.eps)?)?,
            };
            self.second[i] = v;
            var.set(&(var.as_tensor() - (update * self.lr)?)?)?;
        }
        Ok(())
    }

    /// Moment tensors keyed for checkpointing.
    pub fn state_tensors(&self) -> HashMap<String, Tensor> {
        let mut out = HashMap::new();
        for (i, (name, _)) in self.vars.iter().enumerate() {
            out.insert(format!("opt.m.{name}"), self.first[i].clone());
            out.insert(format!("opt.v.{name}"), self.second[i].clone());
        }
        out
    }

    pub fn load_state(&mut self, tensors: &HashMap<String, Tensor>, steps: u64) -> Result<()> {
        for (i, (name, var)) in self.vars.iter().enumerate() {
            for (prefix, slot) in [("opt.m", &mut self.first[i]), ("opt.v", &mut self.second[i])] {
                let key = format!("{prefix}.{name}");
                let t = tensors
                    .get(&key)
                    .ok_or_else(|| LabError::Data { index: i, message: format!("checkpoint lacks {key}") })?;
                *slot = t.to_dtype(var.dtype())?;
            }
        }
        self.steps = steps;
        Ok(())
    }
}
