//! Winner-take-all probe: gradient descent on attention-mask logits alone,
//! with the per-slot reconstruction errors frozen.

use candle_core::{DType, Device, Tensor, Var};
use candle_nn::ops::log_softmax;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::losses::{ir_image, ir_loss, mw_loss, nll_loss, DEFAULT_SIGMA_FOREGROUND};
use crate::model::AttentionMaskSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeLoss {
    Nll,
    Mw,
    Ir,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub loss: ProbeLoss,
    pub k: usize,
    /// `squared_errors[pixel][slot]`.
    pub squared_errors: Vec<Vec<f64>>,
    /// Per-slot σ for NLL; IR uses the first entry.
    pub sigma: Vec<f64>,
    pub steps: usize,
    pub step_size: f64,
}

impl ProbeConfig {
    pub fn new(loss: ProbeLoss, squared_errors: Vec<Vec<f64>>) -> Self {
        let k = squared_errors.first().map(Vec::len).unwrap_or(0);
        ProbeConfig {
            loss,
            k,
            squared_errors,
            sigma: vec![DEFAULT_SIGMA_FOREGROUND; k],
            steps: 5_000,
            step_size: 4.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(LabError::config("k", "need at least 2 slots"));
        }
        if self.squared_errors.is_empty() {
            return Err(LabError::config("errors", "no pixels"));
        }
        for (i, row) in self.squared_errors.iter().enumerate() {
            if row.len() != self.k {
                return Err(LabError::config("errors", format!("pixel {i} has {} errors for K={}", row.len(), self.k)));
            }
            if row.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
                return Err(LabError::config("errors", format!("pixel {i}: errors must be finite and ≥ 0")));
            }
        }
        let need = if self.loss == ProbeLoss::Nll { self.k } else { 1 };
        if self.sigma.len() < need || self.sigma.iter().any(|s| !(*s > 0.0)) {
            return Err(LabError::config("sigma", format!("need {need} positive values")));
        }
        if !(self.step_size > 0.0) {
            return Err(LabError::config("lr", "must be positive"));
        }
        Ok(())
    }

    /// Per-slot score to be maximized at each pixel; its argmax is the optimal
    /// one-hot mask.
    fn scores(&self, pixel: usize) -> Vec<f64> {
        let e = &self.squared_errors[pixel];
        match self.loss {
            ProbeLoss::Nll => e
                .iter()
                .zip(&self.sigma)
                .map(|(e, s)| -s.ln() - e / (2.0 * s * s))
                .collect(),
            ProbeLoss::Mw | ProbeLoss::Ir => e.iter().map(|e| -e).collect(),
        }
    }

    /// Minimum of the summed per-pixel loss over the simplex.
    fn analytic_minimum(&self) -> f64 {
        let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        (0..self.squared_errors.len())
            .map(|p| {
                let best = self.scores(p).into_iter().fold(f64::NEG_INFINITY, f64::max);
                match self.loss {
                    ProbeLoss::Nll => half_log_2pi - best,
                    ProbeLoss::Mw => -best,
                    ProbeLoss::Ir => {
                        let s = self.sigma[0];
                        s.ln() + half_log_2pi - best / (2.0 * s * s)
                    }
                }
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub loss: ProbeLoss,
    pub k: usize,
    /// `final_masks[pixel][slot]`.
    pub final_masks: Vec<Vec<f64>>,
    /// Binarization index before the first step and after every step.
    pub binarization: Vec<f64>,
    pub winners: Vec<usize>,
    pub optimal: Vec<usize>,
    /// Pixels whose optimum is not a unique vertex.
    pub tie_pixels: Vec<usize>,
    pub final_loss: f64,
    pub analytic_minimum: f64,
    /// Largest logit-gradient magnitude at the first step.
    pub initial_max_grad: f64,
}

impl ProbeResult {
    pub fn final_binarization(&self) -> f64 {
        *self.binarization.last().unwrap_or(&f64::NAN)
    }

    /// Every non-tied pixel ended on its optimal slot.
    pub fn winners_match(&self) -> bool {
        self.winners
            .iter()
            .zip(&self.optimal)
            .enumerate()
            .all(|(p, (w, o))| self.tie_pixels.contains(&p) || w == o)
    }
}

fn argmax(v: &[f64]) -> (usize, bool) {
    let best = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let first = v.iter().position(|x| *x == best).unwrap_or(0);
    let tied = v.iter().filter(|x| **x == best).count() > 1;
    (first, tied)
}

/// Summed per-pixel loss of the chosen kind at the given mask logits.
fn probe_loss(cfg: &ProbeConfig, logits: &Tensor, x: &Tensor, components: &Tensor) -> Result<Tensor> {
    let masks = AttentionMaskSet::from_log(log_softmax(logits, 1)?);
    let pixels = cfg.squared_errors.len() as f64;
    match cfg.loss {
        ProbeLoss::Nll => nll_loss(x, &masks, components, &cfg.sigma[..cfg.k]),
        ProbeLoss::Mw => Ok((mw_loss(x, &masks, components)? * pixels)?),
        ProbeLoss::Ir => ir_loss(x, &ir_image(&masks, components)?, cfg.sigma[0]),
    }
}

pub fn winner_take_all_probe(cfg: &ProbeConfig) -> Result<ProbeResult> {
    cfg.validate()?;
    let dev = Device::Cpu;
    let (k, p) = (cfg.k, cfg.squared_errors.len());
    // Zero target and components √e make each slot's squared error exactly e.
    let x = Tensor::zeros((1, 1, 1, p), DType::F64, &dev)?;
    let mut comp = vec![0.0; k * p];
    for (pi, row) in cfg.squared_errors.iter().enumerate() {
        for (ki, e) in row.iter().enumerate() {
            comp[ki * p + pi] = e.sqrt();
        }
    }
    let components = Tensor::from_vec(comp, (1, k, 1, 1, p), &dev)?;
    let logits = Var::zeros((1, k, 1, p), DType::F64, &dev)?;

    let mut binarization = Vec::with_capacity(cfg.steps + 1);
    let bin = |t: &Tensor| -> Result<f64> {
        let m = candle_nn::ops::softmax(t, 1)?;
        Ok(m.max(1)?.mean_all()?.to_scalar::<f64>()?)
    };
    binarization.push(bin(logits.as_tensor())?);
    let mut initial_max_grad = 0.0;
    for step in 0..cfg.steps {
        let loss = probe_loss(cfg, logits.as_tensor(), &x, &components)?;
        let grads = loss.backward()?;
        let g = grads
            .get(logits.as_tensor())
            .map(Tensor::detach)
            .unwrap_or(logits.as_tensor().zeros_like()?);
        if step == 0 {
            initial_max_grad = g.abs()?.max_all()?.to_scalar::<f64>()?;
        }
        logits.set(&(logits.as_tensor() - (g * cfg.step_size)?)?)?;
        binarization.push(bin(logits.as_tensor())?);
    }

    let final_loss = probe_loss(cfg, logits.as_tensor(), &x, &components)?.to_scalar::<f64>()?;
    let masks = candle_nn::ops::softmax(logits.as_tensor(), 1)?.reshape((k, p))?.to_vec2::<f64>()?;
    let final_masks: Vec<Vec<f64>> = (0..p).map(|pi| (0..k).map(|ki| masks[ki][pi]).collect()).collect();
    let winners = final_masks.iter().map(|m| argmax(m).0).collect();
    let mut optimal = Vec::with_capacity(p);
    let mut tie_pixels = Vec::new();
    for pi in 0..p {
        let (best, tied) = argmax(&cfg.scores(pi));
        optimal.push(best);
        if tied {
            tie_pixels.push(pi);
        }
    }
    Ok(ProbeResult {
        loss: cfg.loss,
        k,
        final_masks,
        binarization,
        winners,
        optimal,
        tie_pixels,
        final_loss,
        analytic_minimum: cfg.analytic_minimum(),
        initial_max_grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mw_two_slots_goes_one_hot() {
        let mut cfg = ProbeConfig::new(ProbeLoss::Mw, vec![vec![0.01, 0.25]]);
        cfg.steps = 2_000;
        let r = winner_take_all_probe(&cfg).unwrap();
        assert!((r.final_masks[0][0] - 1.0).abs() < 1e-2);
        assert_eq!(r.winners, vec![0]);
        assert!((r.final_loss - r.analytic_minimum).abs() < 1e-3);
        assert_eq!(r.binarization.len(), 2_001);
        assert_eq!(r.binarization[0], 0.5);
    }

    #[test]
    fn nll_two_slots_goes_one_hot() {
        let mut cfg = ProbeConfig::new(ProbeLoss::Nll, vec![vec![0.01, 0.25]]);
        cfg.steps = 2_000;
        let r = winner_take_all_probe(&cfg).unwrap();
        assert!(r.final_masks[0][0] > 0.99);
        assert!(r.winners_match());
    }

    #[test]
    fn ir_with_coincident_components_stays_uniform() {
        let mut cfg = ProbeConfig::new(ProbeLoss::Ir, vec![vec![0.2; 3], vec![0.05; 3]]);
        cfg.steps = 500;
        let r = winner_take_all_probe(&cfg).unwrap();
        assert_eq!(r.tie_pixels, vec![0, 1]);
        assert!(r.initial_max_grad < 1e-12);
        for b in &r.binarization {
            assert!((b - 1.0 / 3.0).abs() < 1e-6);
        }
    }

    #[test]
    fn malformed_configs_are_rejected() {
        let cfg = ProbeConfig::new(ProbeLoss::Mw, vec![vec![0.1, -0.2]]);
        assert!(winner_take_all_probe(&cfg).is_err());
        let cfg = ProbeConfig::new(ProbeLoss::Mw, vec![vec![0.1, 0.2], vec![0.3]]);
        assert!(winner_take_all_probe(&cfg).is_err());
    }
}
