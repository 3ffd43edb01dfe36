//! Recurrent stick-breaking attention.
//!
//! A U-shaped network looks at the image together with the log of the
//! still-unexplained scope and emits a per-pixel split score α. Step k takes
//! mask `scope·α` and leaves `scope·(1−α)` for later steps; the final slot
//! takes whatever scope remains. Working in log space keeps every mask in
//! [0, 1] and the per-pixel sum at exactly one up to rounding.

use candle_core::{DType, Tensor, D};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{log_sigmoid, Conv2d, ParamStore};
use crate::error::{LabError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionConfig {
    pub base_channels: usize,
    /// Resolution levels of the U-shaped backbone; level l has
    /// `base_channels · 2^l` channels at 1/2^l resolution.
    pub levels: usize,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig {
            base_channels: 32,
            levels: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AttentionNet {
    down: Vec<Conv2d>,
    up: Vec<Conv2d>,
    head: Conv2d,
}

impl AttentionNet {
    pub fn new(
        store: &mut ParamStore,
        cfg: &AttentionConfig,
        channels: usize,
        dtype: DType,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if cfg.levels == 0 || cfg.base_channels == 0 {
            return Err(LabError::config("model.attention", "levels and base_channels must be positive"));
        }
        let width = |l: usize| cfg.base_channels << l;
        let mut down = Vec::with_capacity(cfg.levels);
        let mut in_ch = channels + 1;
        for l in 0..cfg.levels {
            down.push(Conv2d::new(store, &format!("attention.down{l}"), in_ch, width(l), 3, 1, 1, dtype, rng)?);
            in_ch = width(l);
        }
        let mut up = Vec::with_capacity(cfg.levels.saturating_sub(1));
        for l in (0..cfg.levels - 1).rev() {
            up.push(Conv2d::new(
                store,
                &format!("attention.up{l}"),
                width(l + 1) + width(l),
                width(l),
                3,
                1,
                1,
                dtype,
                rng,
            )?);
        }
        let head = Conv2d::new(store, "attention.head", width(0), 1, 1, 1, 0, dtype, rng)?;
        Ok(AttentionNet { down, up, head })
    }

    /// Split-score logits `(B, 1, H, W)` for image `(B, C, H, W)` and log scope
    /// `(B, 1, H, W)`.
    pub fn split_logits(&self, image: &Tensor, log_scope: &Tensor) -> Result<Tensor> {
        let mut h = Tensor::cat(&[image, log_scope], 1)?;
        let mut skips = Vec::with_capacity(self.down.len());
        for (l, conv) in self.down.iter().enumerate() {
            if l > 0 {
                h = h.avg_pool2d(2)?;
            }
            h = conv.forward(&h)?.relu()?;
            skips.push(h.clone());
        }
        skips.pop();
        for conv in &self.up {
            let skip = skips.pop().expect("one skip per up level");
            let (_, _, sh, sw) = skip.dims4()?;
            h = h.upsample_nearest2d(sh, sw)?;
            h = conv.forward(&Tensor::cat(&[&h, &skip], 1)?)?.relu()?;
        }
        self.head.forward(&h)
    }

    /// Log attention masks `(B, K, H, W)` from `slots` stick-breaking steps.
    pub fn attend(&self, image: &Tensor, slots: usize) -> Result<Tensor> {
        let (b, _, h, w) = image.dims4()?;
        let mut log_scope = Tensor::zeros((b, 1, h, w), image.dtype(), image.device())?;
        let mut logits = Vec::with_capacity(slots.saturating_sub(1));
        for _ in 0..slots.saturating_sub(1) {
            let logit = self.split_logits(image, &log_scope)?;
            log_scope = (log_scope + log_sigmoid(&logit.neg()?)?)?;
            logits.push(logit);
        }
        stick_break(&logits, slots)
    }
}

/// Turn `K−1` split logits (each `(B, 1, H, W)`) into `K` log masks
/// `(B, K, H, W)`.
pub fn stick_break(split_logits: &[Tensor], slots: usize) -> Result<Tensor> {
    if slots < 2 {
        return Err(LabError::config("model.slots", "K must be at least 2"));
    }
    if split_logits.len() != slots - 1 {
        return Err(LabError::Shape(format!(
            "{} split logits for {} slots",
            split_logits.len(),
            slots
        )));
    }
    let mut log_scope = split_logits[0].zeros_like()?;
    let mut log_masks = Vec::with_capacity(slots);
    for logit in split_logits {
        log_masks.push((&log_scope + log_sigmoid(logit)?)?);
        log_scope = (log_scope + log_sigmoid(&logit.neg()?)?)?;
    }
    log_masks.push(log_scope);
    Ok(Tensor::cat(&log_masks, 1)?)
}

/// Per-pixel mask sums `(B, H, W)`; ones when the simplex holds.
pub fn mask_sums(log_masks: &Tensor) -> Result<Tensor> {
    Ok(log_masks.exp()?.sum(D::Minus(3))?)
}
