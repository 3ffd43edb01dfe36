//! Component VAE: a strided convolutional encoder over (image, log mask) and a
//! spatial-broadcast decoder emitting a component image plus a mask logit.

use candle_core::{DType, Device, Tensor};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{softplus, Conv2d, Linear, ParamStore};
use crate::error::{LabError, Result};

/// Lower bound added to the softplus scale so σ stays strictly positive in
/// single precision.
pub const MIN_LATENT_STD: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    /// Output channels of each stride-2 convolution.
    pub channels: Vec<usize>,
    pub hidden: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            channels: vec![32, 32, 64],
            hidden: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderConfig {
    /// Output channels of each 3×3 convolution before the 1×1 head.
    pub channels: Vec<usize>,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            channels: vec![32, 32, 32],
        }
    }
}

#[derive(Debug, Clone)]
pub struct Encoder {
    convs: Vec<Conv2d>,
    hidden: Linear,
    head: Linear,
    latent_dim: usize,
}

impl Encoder {
    pub fn new(
        store: &mut ParamStore,
        cfg: &EncoderConfig,
        image_size: usize,
        channels: usize,
        latent_dim: usize,
        dtype: DType,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let mut in_ch = channels + 1;
        let mut side = image_size;
        let mut convs = Vec::with_capacity(cfg.channels.len());
        for (i, &out) in cfg.channels.iter().enumerate() {
            convs.push(Conv2d::new(store, &format!("encoder.conv{i}"), in_ch, out, 3, 2, 1, dtype, rng)?);
            in_ch = out;
            side = side.div_ceil(2);
        }
        let flat = in_ch * side * side;
        let hidden = Linear::new(store, "encoder.hidden", flat, cfg.hidden, dtype, rng)?;
        let head = Linear::new(store, "encoder.head", cfg.hidden, 2 * latent_dim, dtype, rng)?;
        Ok(Encoder {
            convs,
            hidden,
            head,
            latent_dim,
        })
    }

    /// Posterior mean and standard deviation, each `(N, D)`, for inputs
    /// `(N, C, H, W)` and log masks `(N, 1, H, W)`.
    pub fn forward(&self, image: &Tensor, log_mask: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut h = Tensor::cat(&[image, log_mask], 1)?;
        for conv in &self.convs {
            h = conv.forward(&h)?.relu()?;
        }
        let h = self.hidden.forward(&h.flatten_from(1)?)?.relu()?;
        let out = self.head.forward(&h)?;
        let mean = out.narrow(1, 0, self.latent_dim)?;
        let raw_std = out.narrow(1, self.latent_dim, self.latent_dim)?;
        let std = (softplus(&raw_std)? + MIN_LATENT_STD)?;
        Ok((mean, std))
    }
}

#[derive(Debug, Clone)]
pub struct Decoder {
    convs: Vec<Conv2d>,
    head: Conv2d,
    image_size: usize,
    channels: usize,
}

impl Decoder {
    pub fn new(
        store: &mut ParamStore,
        cfg: &DecoderConfig,
        image_size: usize,
        channels: usize,
        latent_dim: usize,
        dtype: DType,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if cfg.channels.is_empty() {
            return Err(LabError::config("model.decoder.channels", "must not be empty"));
        }
        let mut in_ch = latent_dim + 2;
        let mut convs = Vec::with_capacity(cfg.channels.len());
        for (i, &out) in cfg.channels.iter().enumerate() {
            convs.push(Conv2d::new(store, &format!("decoder.conv{i}"), in_ch, out, 3, 1, 1, dtype, rng)?);
            in_ch = out;
        }
        let head = Conv2d::new(store, "decoder.head", in_ch, channels + 1, 1, 1, 0, dtype, rng)?;
        Ok(Decoder {
            convs,
            head,
            image_size,
            channels,
        })
    }

    /// Coordinate channels `(1, 2, H, W)` spanning [−1, 1].
    fn coords(&self, dtype: DType) -> Result<Tensor> {
        let n = self.image_size;
        let lin: Vec<f64> = (0..n)
            .map(|i| if n > 1 { -1.0 + 2.0 * i as f64 / (n - 1) as f64 } else { 0.0 })
            .collect();
        let mut data = Vec::with_capacity(2 * n * n);
        for _ in 0..n {
            data.extend_from_slice(&lin);
        }
        for &y in &lin {
            data.extend(std::iter::repeat_n(y, n));
        }
        Ok(Tensor::from_vec(data, (1, 2, n, n), &Device::Cpu)?.to_dtype(dtype)?)
    }

    /// Component images `(N, C, H, W)` and mask logits `(N, 1, H, W)` for
    /// latents `(N, D)`.
    pub fn forward(&self, latents: &Tensor) -> Result<(Tensor, Tensor)> {
        let (n, d) = latents.dims2()?;
        let s = self.image_size;
        let tiled = latents.reshape((n, d, 1, 1))?.broadcast_as((n, d, s, s))?;
        let coords = self.coords(latents.dtype())?.broadcast_as((n, 2, s, s))?;
        let mut h = Tensor::cat(&[&tiled, &coords], 1)?;
        for conv in &self.convs {
            h = conv.forward(&h)?.relu()?;
        }
        let out = self.head.forward(&h)?;
        let image = out.narrow(1, 0, self.channels)?;
        let mask_logit = out.narrow(1, self.channels, 1)?;
        Ok((image, mask_logit))
    }
}
