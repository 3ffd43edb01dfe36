//! The scene decomposition model: stick-breaking attention followed by a
//! shared component VAE applied to every slot.
//!
//! Tensors are batch-first. With `B` images, `K` slots, `C` channels and
//! latent size `D`:
//!
//! | quantity            | shape            |
//! |---------------------|------------------|
//! | images              | (B, C, H, W)     |
//! | log attention masks | (B, K, H, W)     |
//! | posterior mean/std  | (B, K, D)        |
//! | component images    | (B, K, C, H, W)  |
//! | mask logits         | (B, K, H, W)     |

pub mod attention;
pub mod layers;
pub mod vae;

use candle_core::{DType, Device, Tensor, D};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use attention::{stick_break, AttentionConfig, AttentionNet};
pub use layers::ParamStore;
pub use vae::{Decoder, DecoderConfig, Encoder, EncoderConfig};

use crate::error::{LabError, Result};
use crate::seed;

/// Floor applied to mask probabilities before taking logs.
pub const MASK_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn dtype(self) -> DType {
        match self {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EpsMode {
    Stochastic,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub image_size: usize,
    pub channels: usize,
    /// K, the number of slots.
    pub slots: usize,
    /// D, the latent size per slot.
    pub latent_dim: usize,
    pub attention: AttentionConfig,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub precision: Precision,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_size: 32,
            channels: 3,
            slots: 4,
            latent_dim: 16,
            attention: AttentionConfig::default(),
            encoder: EncoderConfig::default(),
            decoder: DecoderConfig::default(),
            precision: Precision::F32,
        }
    }
}

impl ModelConfig {
    /// A very small network for 8×8 inputs, used by tests and smoke runs.
    pub fn toy(slots: usize) -> Self {
        ModelConfig {
            image_size: 8,
            channels: 3,
            slots,
            latent_dim: 4,
            attention: AttentionConfig {
                base_channels: 4,
                levels: 2,
            },
            encoder: EncoderConfig {
                channels: vec![8, 8],
                hidden: 16,
            },
            decoder: DecoderConfig {
                channels: vec![8, 8],
            },
            precision: Precision::F32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.slots < 2 {
            return Err(LabError::config("model.slots", "K must be at least 2"));
        }
        if self.latent_dim == 0 {
            return Err(LabError::config("model.latent_dim", "must be positive"));
        }
        if self.channels == 0 {
            return Err(LabError::config("model.channels", "must be positive"));
        }
        let levels = self.attention.levels.max(1);
        let stride = 1usize << (levels - 1);
        if self.image_size == 0 || !self.image_size.is_multiple_of(stride) {
            return Err(LabError::config(
                "model.image_size",
                format!("must be a positive multiple of {stride} for {levels} attention levels"),
            ));
        }
        Ok(())
    }
}

/// K per-pixel soft masks stored in the log domain, `(B, K, H, W)`.
#[derive(Debug, Clone)]
pub struct AttentionMaskSet {
    pub log_masks: Tensor,
}

impl AttentionMaskSet {
    pub fn from_log(log_masks: Tensor) -> Self {
        AttentionMaskSet { log_masks }
    }

    /// Wrap probability masks `(B, K, H, W)`; zeros are floored at
    /// [`MASK_FLOOR`] before the log.
    pub fn from_probabilities(masks: &Tensor) -> Result<Self> {
        Ok(AttentionMaskSet {
            log_masks: masks.maximum(MASK_FLOOR)?.log()?,
        })
    }

    pub fn masks(&self) -> Result<Tensor> {
        Ok(self.log_masks.exp()?)
    }

    pub fn slots(&self) -> Result<usize> {
        Ok(self.log_masks.dims4()?.1)
    }

    /// Check ranges and per-pixel sums against `tol`.
    pub fn check_simplex(&self, tol: f64) -> Result<()> {
        check_simplex(&self.masks()?, tol)
    }
}

/// Verify a `(B, K, H, W)` probability tensor lies on the per-pixel simplex.
pub fn check_simplex(masks: &Tensor, tol: f64) -> Result<()> {
    let (b, k, h, w) = masks.dims4()?;
    if k < 2 {
        return Err(LabError::Invariant(format!("need K >= 2 masks, got {k}")));
    }
    let values = masks.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    let plane = h * w;
    for bi in 0..b {
        for p in 0..plane {
            let mut sum = 0.0;
            for ki in 0..k {
                let v = values[(bi * k + ki) * plane + p];
                if !(-tol..=1.0 + tol).contains(&v) {
                    return Err(LabError::Invariant(format!(
                        "mask value {v} outside [0, 1] at batch {bi}, slot {ki}, pixel {p}"
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > tol {
                return Err(LabError::Invariant(format!(
                    "masks sum to {sum} at batch {bi}, pixel {p}"
                )));
            }
        }
    }
    Ok(())
}

/// Gaussian posterior parameters, `(…, D)` each.
#[derive(Debug, Clone)]
pub struct LatentPosterior {
    pub mean: Tensor,
    pub std: Tensor,
}

impl LatentPosterior {
    pub fn latent_dim(&self) -> Result<usize> {
        Ok(self.mean.dim(D::Minus1)?)
    }
}

#[derive(Debug, Clone)]
pub struct ComponentOutput {
    /// `(…, C, H, W)`
    pub images: Tensor,
    /// `(…, H, W)`
    pub mask_logits: Tensor,
}

#[derive(Debug, Clone)]
pub struct SceneDecomposition {
    pub masks: AttentionMaskSet,
    pub posterior: LatentPosterior,
    pub latents: Tensor,
    pub components: ComponentOutput,
    /// log m̃, the log-softmax across slots of the mask logits, `(B, K, H, W)`.
    pub log_recon_masks: Tensor,
}

impl SceneDecomposition {
    pub fn recon_masks(&self) -> Result<Tensor> {
        Ok(self.log_recon_masks.exp()?)
    }
}

/// Draw `z = μ + ε σ`. In zero mode the mean is returned unchanged.
pub fn sample_latent(posterior: &LatentPosterior, eps_mode: EpsMode, seed: u64) -> Result<Tensor> {
    match eps_mode {
        EpsMode::Zero => Ok(posterior.mean.clone()),
        EpsMode::Stochastic => {
            let shape = posterior.mean.shape().clone();
            let mut rng = seed::rng(seed, seed::LATENT_NOISE, &[]);
            let eps: Vec<f64> = (0..shape.elem_count())
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let eps = Tensor::from_vec(eps, shape, posterior.mean.device())?
                .to_dtype(posterior.mean.dtype())?;
            Ok((&posterior.mean + eps.mul(&posterior.std)?)?)
        }
    }
}

/// Convert row-major `N×H×W×C` pixels into an `(N, C, H, W)` tensor.
pub fn images_to_tensor(
    data: &[f32],
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    dtype: DType,
) -> Result<Tensor> {
    if data.len() != n * h * w * c {
        return Err(LabError::Shape(format!(
            "{} values for {n}×{h}×{w}×{c} images",
            data.len()
        )));
    }
    let t = Tensor::from_slice(data, (n, h, w, c), &Device::Cpu)?
        .permute((0, 3, 1, 2))?
        .contiguous()?
        .to_dtype(dtype)?;
    Ok(t)
}

fn ensure_finite(t: &Tensor, what: &str) -> Result<()> {
    let s = t.to_dtype(DType::F64)?.sum_all()?.to_scalar::<f64>()?;
    if s.is_finite() {
        Ok(())
    } else {
        Err(LabError::NumericInput(format!("{what} contains non-finite values")))
    }
}

#[derive(Debug, Clone)]
pub struct Monet {
    config: ModelConfig,
    params: ParamStore,
    attention: AttentionNet,
    encoder: Encoder,
    decoder: Decoder,
}

impl Monet {
    /// Build a model with parameters drawn from the `init` stream of `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let dtype = config.precision.dtype();
        let mut rng = seed::rng(seed, seed::INIT, &[]);
        let mut params = ParamStore::new();
        let attention = AttentionNet::new(&mut params, &config.attention, config.channels, dtype, &mut rng)?;
        let encoder = Encoder::new(
            &mut params,
            &config.encoder,
            config.image_size,
            config.channels,
            config.latent_dim,
            dtype,
            &mut rng,
        )?;
        let decoder = Decoder::new(
            &mut params,
            &config.decoder,
            config.image_size,
            config.channels,
            config.latent_dim,
            dtype,
            &mut rng,
        )?;
        Ok(Monet {
            config,
            params,
            attention,
            encoder,
            decoder,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn dtype(&self) -> DType {
        self.config.precision.dtype()
    }

    fn check_image(&self, image: &Tensor) -> Result<()> {
        let (_, c, h, w) = image.dims4()?;
        let s = self.config.image_size;
        if (c, h, w) != (self.config.channels, s, s) {
            return Err(LabError::Shape(format!(
                "image is {c}×{h}×{w}, model expects {}×{s}×{s}",
                self.config.channels
            )));
        }
        ensure_finite(image, "image")
    }

    pub fn attend(&self, image: &Tensor) -> Result<AttentionMaskSet> {
        self.check_image(image)?;
        let log_masks = self.attention.attend(image, self.config.slots)?;
        Ok(AttentionMaskSet::from_log(log_masks))
    }

    /// Encode one slot: image `(N, C, H, W)` with probability mask `(N, 1, H, W)`.
    pub fn encode(&self, image: &Tensor, mask: &Tensor) -> Result<LatentPosterior> {
        let (n, _, h, w) = image.dims4()?;
        let (mn, mc, mh, mw) = mask.dims4()?;
        if (mn, mc, mh, mw) != (n, 1, h, w) {
            return Err(LabError::Shape(format!(
                "mask is {mn}×{mc}×{mh}×{mw}, image needs {n}×1×{h}×{w}"
            )));
        }
        let log_mask = mask.maximum(MASK_FLOOR)?.log()?;
        let (mean, std) = self.encoder.forward(image, &log_mask)?;
        Ok(LatentPosterior { mean, std })
    }

    /// Decode latents `(N, D)` into component images and mask logits.
    pub fn decode(&self, latents: &Tensor) -> Result<ComponentOutput> {
        ensure_finite(latents, "latent")?;
        let (images, mask_logits) = self.decoder.forward(latents)?;
        Ok(ComponentOutput {
            images,
            mask_logits: mask_logits.squeeze(1)?,
        })
    }

    /// Full decomposition of a batch `(B, C, H, W)`.
    pub fn forward(&self, image: &Tensor, eps_mode: EpsMode, noise_seed: u64) -> Result<SceneDecomposition> {
        let masks = self.attend(image)?;
        let (b, c, h, w) = image.dims4()?;
        let k = self.config.slots;
        let d = self.config.latent_dim;

        // Every slot goes through the shared VAE as one (B·K) batch.
        let tiled = image
            .unsqueeze(1)?
            .broadcast_as((b, k, c, h, w))?
            .reshape((b * k, c, h, w))?;
        let log_mask = masks.log_masks.reshape((b * k, 1, h, w))?;
        let (mean, std) = self.encoder.forward(&tiled, &log_mask)?;
        let posterior = LatentPosterior {
            mean: mean.reshape((b, k, d))?,
            std: std.reshape((b, k, d))?,
        };
        let latents = sample_latent(&posterior, eps_mode, noise_seed)?;
        let (images, mask_logits) = self.decoder.forward(&latents.reshape((b * k, d))?)?;
        let components = ComponentOutput {
            images: images.reshape((b, k, c, h, w))?,
            mask_logits: mask_logits.reshape((b, k, h, w))?,
        };
        let log_recon_masks = candle_nn::ops::log_softmax(&components.mask_logits, 1)?;
        Ok(SceneDecomposition {
            masks,
            posterior,
            latents,
            components,
            log_recon_masks,
        })
    }
}
