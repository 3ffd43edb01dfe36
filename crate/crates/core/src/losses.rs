//! Loss terms and their composition.
//!
//! Every term is a differentiable function of candle tensors and returns the
//! mean over the batch of a per-image value. Per image, the reconstruction
//! NLL and IR losses sum over all `I = H·W·C` entries, the MSE and
//! mask-weighted losses average over `I`, and the squared-error mask loss
//! averages over the `H·W` mask pixels.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::model::{check_simplex, AttentionMaskSet, EpsMode, LatentPosterior, SceneDecomposition, MASK_FLOOR};

/// Reduction convention attached to every breakdown.
pub const REDUCTION: &str = "nll,ir: sum over H*W*C; mse,mw: mean over H*W*C; mask_kl: sum over H*W; mask_mse: mean over H*W; all: mean over batch";

/// Per-pixel simplex tolerance used when validating masks inside losses.
pub const SIMPLEX_TOL: f64 = 1e-4;

pub const DEFAULT_SIGMA_BACKGROUND: f64 = 0.11;
pub const DEFAULT_SIGMA_FOREGROUND: f64 = 0.09;
pub const DEFAULT_SIGMA_IR: f64 = 0.09;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReconTerm {
    #[serde(rename = "NLL")]
    Nll,
    #[serde(rename = "IR")]
    Ir,
    #[serde(rename = "MSE")]
    Mse,
    #[serde(rename = "MW")]
    Mw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskTerm {
    #[serde(rename = "KL")]
    Kl,
    #[serde(rename = "MSE")]
    Mse,
    #[serde(rename = "NONE")]
    None,
}

/// How the mask KL treats the K masks at a pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskKlForm {
    /// One categorical distribution over slots per pixel.
    #[default]
    Categorical,
    /// An independent Bernoulli per slot and pixel.
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub recon_term: ReconTerm,
    pub mask_term: MaskTerm,
    pub beta: f64,
    pub gamma: f64,
    /// Per-slot σ for NLL (length K, or one value for all slots) or the single
    /// σ for IR. `None` selects the defaults.
    #[serde(default)]
    pub sigma_x: Option<Vec<f64>>,
    pub eps_mode: EpsMode,
    #[serde(default)]
    pub mask_kl_form: MaskKlForm,
}

impl LossConfig {
    /// β = 0.5, γ = 0.25, NLL with the categorical mask KL.
    pub fn monet_original() -> Self {
        LossConfig {
            recon_term: ReconTerm::Nll,
            mask_term: MaskTerm::Kl,
            beta: 0.5,
            gamma: 0.25,
            sigma_x: None,
            eps_mode: EpsMode::Stochastic,
            mask_kl_form: MaskKlForm::Categorical,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(LabError::config("beta", "must be a non-negative real"));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(LabError::config("gamma", "must be a non-negative real"));
        }
        if let Some(s) = &self.sigma_x {
            if s.is_empty() || s.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(LabError::config("sigma_x", "entries must be positive"));
            }
            if self.recon_term == ReconTerm::Ir && s.len() != 1 {
                return Err(LabError::config("sigma_x", "IR uses a single sigma"));
            }
        }
        match (self.beta > 0.0, self.eps_mode) {
            (true, EpsMode::Zero) => Err(LabError::config(
                "eps_mode",
                "beta > 0 requires stochastic latent sampling",
            )),
            (false, EpsMode::Stochastic) => Err(LabError::config(
                "eps_mode",
                "beta = 0 requires eps_mode = zero",
            )),
            _ => Ok(()),
        }
    }

    /// σ per slot for NLL or the single IR σ (as a one-element vector).
    pub fn resolved_sigma(&self, slots: usize) -> Result<Vec<f64>> {
        match (self.recon_term, &self.sigma_x) {
            (ReconTerm::Ir, None) => Ok(vec![DEFAULT_SIGMA_IR]),
            (ReconTerm::Ir, Some(s)) => Ok(vec![s[0]]),
            (_, None) => Ok((0..slots)
                .map(|k| if k == 0 { DEFAULT_SIGMA_BACKGROUND } else { DEFAULT_SIGMA_FOREGROUND })
                .collect()),
            (_, Some(s)) if s.len() == 1 => Ok(vec![s[0]; slots]),
            (_, Some(s)) if s.len() == slots => Ok(s.clone()),
            (_, Some(s)) => Err(LabError::config(
                "sigma_x",
                format!("{} values for K = {slots} slots", s.len()),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub recon: f64,
    pub latent_kl: f64,
    pub mask: f64,
    /// MSE between the input and the mask-weighted reconstruction.
    pub mse_monitor: f64,
    pub reduction: String,
}

/// The scalar to differentiate plus its decomposition.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub total: Tensor,
    pub breakdown: LossBreakdown,
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

fn check_same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(LabError::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// (B, K, H, W) → (B, K, 1, H, W) so masks broadcast over channels.
fn per_channel(t: &Tensor) -> Result<Tensor> {
    Ok(t.unsqueeze(2)?)
}

fn check_components(x: &Tensor, masks: &Tensor, components: &Tensor) -> Result<()> {
    let (b, c, h, w) = x.dims4()?;
    let (mb, k, mh, mw) = masks.dims4()?;
    let dims = components.dims();
    if (mb, mh, mw) != (b, h, w) || dims != [b, k, c, h, w] {
        return Err(LabError::Shape(format!(
            "image {:?}, masks {:?}, components {:?}",
            x.dims(),
            masks.dims(),
            dims
        )));
    }
    Ok(())
}

fn batch_mean(per_image: &Tensor) -> Result<Tensor> {
    Ok(per_image.mean(0)?)
}

/// Fail when some pixel has every mask at (numerically) zero.
fn check_pixel_support(masks: &Tensor) -> Result<()> {
    let max = masks.max(1)?.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
    if let Some(p) = max.iter().position(|&v| !(v > 0.0)) {
        return Err(LabError::Invariant(format!("all masks are zero at pixel {p}")));
    }
    Ok(())
}

fn floored_log_masks(masks: &AttentionMaskSet) -> Result<Tensor> {
    Ok(masks.log_masks.maximum(MASK_FLOOR.ln())?)
}

/// Mask-weighted Gaussian mixture negative log likelihood.
///
/// Per image: −Σᵢ log Σₖ mₖ 𝒩(xᵢ; x̃ₖᵢ, σₖ²), evaluated as a log-sum-exp over
/// slots.
pub fn nll_loss(
    x: &Tensor,
    masks: &AttentionMaskSet,
    components: &Tensor,
    sigma_x: &[f64],
) -> Result<Tensor> {
    check_components(x, &masks.log_masks, components)?;
    let k = masks.slots()?;
    if sigma_x.len() != k {
        return Err(LabError::Shape(format!("{} sigmas for {k} slots", sigma_x.len())));
    }
    if sigma_x.iter().any(|s| !(*s > 0.0)) {
        return Err(LabError::Invariant("sigma_x entries must be positive".into()));
    }
    check_pixel_support(&masks.masks()?)?;
    let dtype = x.dtype();
    let dev = x.device();
    let inv_two_var: Vec<f64> = sigma_x.iter().map(|s| 1.0 / (2.0 * s * s)).collect();
    let log_norm: Vec<f64> = sigma_x
        .iter()
        .map(|s| -s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln())
        .collect();
    let inv_two_var = Tensor::from_vec(inv_two_var, (1, k, 1, 1, 1), dev)?.to_dtype(dtype)?;
    let log_norm = Tensor::from_vec(log_norm, (1, k, 1, 1, 1), dev)?.to_dtype(dtype)?;

    let sq = components.broadcast_sub(&x.unsqueeze(1)?)?.sqr()?;
    let log_terms = per_channel(&floored_log_masks(masks)?)?
        .broadcast_add(&log_norm)?
        .broadcast_sub(&sq.broadcast_mul(&inv_two_var)?)?;
    let per_entry = log_terms.log_sum_exp(1)?;
    let per_image = per_entry.flatten_from(1)?.sum(1)?.neg()?;
    batch_mean(&per_image)
}

/// Integrated reconstruction Σₖ mₖ x̃ₖ, `(B, C, H, W)`.
pub fn ir_image(masks: &AttentionMaskSet, components: &Tensor) -> Result<Tensor> {
    let m = per_channel(&masks.masks()?)?;
    Ok(components.broadcast_mul(&m)?.sum(1)?)
}

/// Gaussian NLL of the input under the integrated reconstruction with a
/// single σ: I·log(σ√(2π)) + Σᵢ (xᵢ − x̃ᵢ)² / (2σ²).
pub fn ir_loss(x: &Tensor, x_ir: &Tensor, sigma_x: f64) -> Result<Tensor> {
    check_same_shape(x, x_ir, "ir_loss")?;
    if !(sigma_x > 0.0) {
        return Err(LabError::Invariant("sigma_x must be positive".into()));
    }
    let entries: usize = x.dims()[1..].iter().product();
    let constant = entries as f64 * (sigma_x * (2.0 * std::f64::consts::PI).sqrt()).ln();
    let per_image = (x - x_ir)?.sqr()?.flatten_from(1)?.sum(1)?;
    let per_image = per_image.affine(1.0 / (2.0 * sigma_x * sigma_x), constant)?;
    batch_mean(&per_image)
}

/// Mean squared error over all H·W·C entries.
pub fn mse_loss(x: &Tensor, x_ir: &Tensor) -> Result<Tensor> {
    check_same_shape(x, x_ir, "mse_loss")?;
    let per_image = (x - x_ir)?.sqr()?.flatten_from(1)?.mean(1)?;
    batch_mean(&per_image)
}

/// Mask-weighted squared error: (1/I) Σᵢ Σₖ mₖ (x − x̃ₖ)².
pub fn mw_loss(x: &Tensor, masks: &AttentionMaskSet, components: &Tensor) -> Result<Tensor> {
    check_components(x, &masks.log_masks, components)?;
    let m = per_channel(&masks.masks()?)?;
    let sq = components.broadcast_sub(&x.unsqueeze(1)?)?.sqr()?;
    let weighted = sq.broadcast_mul(&m)?.sum(1)?;
    let per_image = weighted.flatten_from(1)?.mean(1)?;
    batch_mean(&per_image)
}

/// KL of the diagonal Gaussian posteriors from the standard normal prior,
/// summed over slots and latent dimensions.
pub fn latent_kl(posterior: &LatentPosterior) -> Result<Tensor> {
    check_same_shape(&posterior.mean, &posterior.std, "latent_kl")?;
    let min_std = posterior
        .std
        .flatten_all()?
        .min(0)?
        .to_dtype(DType::F64)?
        .to_scalar::<f64>()?;
    if !(min_std > 0.0) {
        return Err(LabError::Invariant(format!("posterior std {min_std} is not positive")));
    }
    let var = posterior.std.sqr()?;
    let terms = ((posterior.mean.sqr()? + &var)? - var.log()?)?.affine(0.5, -0.5)?;
    let per_image = if terms.rank() > 1 {
        terms.flatten_from(1)?.sum(1)?
    } else {
        terms.sum_keepdim(0)?
    };
    batch_mean(&per_image)
}

/// Σᵢ Σₖ mₖ (log mₖ − log m̃ₖ), with both sides floored at the mask floor.
pub fn mask_kl(masks: &AttentionMaskSet, log_recon_masks: &Tensor) -> Result<Tensor> {
    mask_kl_with(masks, log_recon_masks, MaskKlForm::Categorical)
}

pub fn mask_kl_with(masks: &AttentionMaskSet, log_recon_masks: &Tensor, form: MaskKlForm) -> Result<Tensor> {
    check_same_shape(&masks.log_masks, log_recon_masks, "mask_kl")?;
    let m = masks.masks()?;
    check_simplex(&m, SIMPLEX_TOL)?;
    check_simplex(&log_recon_masks.exp()?, SIMPLEX_TOL)?;
    let floor = MASK_FLOOR.ln();
    let log_m = floored_log_masks(masks)?;
    let log_r = log_recon_masks.maximum(floor)?;
    let mut terms = m.mul(&(log_m - &log_r)?)?;
    if form == MaskKlForm::Binary {
        let one_minus = |t: &Tensor| -> Result<Tensor> { Ok(t.affine(-1.0, 1.0)?) };
        let cm = one_minus(&m)?;
        let log_cm = cm.maximum(MASK_FLOOR)?.log()?;
        let log_cr = one_minus(&log_recon_masks.exp()?)?.maximum(MASK_FLOOR)?.log()?;
        terms = (terms + cm.mul(&(log_cm - log_cr)?)?)?;
    }
    let per_image = terms.flatten_from(1)?.sum(1)?;
    batch_mean(&per_image)
}

/// (1/(H·W)) Σᵢ Σₖ (mₖ − m̃ₖ)².
pub fn mask_mse(masks: &AttentionMaskSet, recon_masks: &Tensor) -> Result<Tensor> {
    let m = masks.masks()?;
    check_same_shape(&m, recon_masks, "mask_mse")?;
    let (_, _, h, w) = m.dims4()?;
    let per_image = (m - recon_masks)?
        .sqr()?
        .flatten_from(1)?
        .sum(1)?
        .affine(1.0 / (h * w) as f64, 0.0)?;
    batch_mean(&per_image)
}

/// Compose the configured objective for a decomposition of `x`.
pub fn total_loss(x: &Tensor, dec: &SceneDecomposition, config: &LossConfig) -> Result<LossOutput> {
    config.validate()?;
    let k = dec.masks.slots()?;
    let components = &dec.components.images;
    let x_ir = ir_image(&dec.masks, components)?;
    let recon = match config.recon_term {
        ReconTerm::Nll => nll_loss(x, &dec.masks, components, &config.resolved_sigma(k)?)?,
        ReconTerm::Ir => ir_loss(x, &x_ir, config.resolved_sigma(k)?[0])?,
        ReconTerm::Mse => mse_loss(x, &x_ir)?,
        ReconTerm::Mw => mw_loss(x, &dec.masks, components)?,
    };
    let kl = latent_kl(&dec.posterior)?;
    let mask = match config.mask_term {
        MaskTerm::Kl => Some(mask_kl_with(&dec.masks, &dec.log_recon_masks, config.mask_kl_form)?),
        MaskTerm::Mse => Some(mask_mse(&dec.masks, &dec.recon_masks()?)?),
        MaskTerm::None => None,
    };

    let mut total = recon.clone();
    if config.beta > 0.0 {
        total = (total + kl.affine(config.beta, 0.0)?)?;
    }
    if let (Some(m), true) = (&mask, config.gamma > 0.0) {
        total = (total + m.affine(config.gamma, 0.0)?)?;
    }
    let mse_monitor = scalar(&mse_loss(&x.detach(), &x_ir.detach())?)?;
    let recon_v = scalar(&recon)?;
    let kl_v = scalar(&kl)?;
    let mask_v = match &mask {
        Some(m) => scalar(m)?,
        None => 0.0,
    };
    let breakdown = LossBreakdown {
        total: scalar(&total)?,
        recon: recon_v,
        latent_kl: kl_v,
        mask: mask_v,
        mse_monitor,
        reduction: REDUCTION.to_string(),
    };
    Ok(LossOutput { total, breakdown })
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn t(data: &[f64], shape: &[usize]) -> Tensor {
        Tensor::from_vec(data.to_vec(), shape, &Device::Cpu).unwrap()
    }

    fn val(t: &Tensor) -> f64 {
        t.to_scalar::<f64>().unwrap()
    }

    fn masks(data: &[f64], shape: &[usize]) -> AttentionMaskSet {
        AttentionMaskSet::from_probabilities(&t(data, shape)).unwrap()
    }

    #[test]
    fn nll_single_slot_perfect_reconstruction() {
        // K = 2 with all weight on slot 1 stands in for K = 1.
        let x = t(&[0.3, -0.2, 0.5, 0.1], &[1, 1, 2, 2]);
        let comps = Tensor::cat(&[x.unsqueeze(1).unwrap(), x.unsqueeze(1).unwrap()], 1).unwrap();
        let m = masks(&[1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0], &[1, 2, 2, 2]);
        let v = val(&nll_loss(&x, &m, &comps, &[0.09, 0.09]).unwrap());
        let per_pixel = (0.09 * (2.0 * std::f64::consts::PI).sqrt()).ln();
        assert!((per_pixel + 1.489007).abs() < 1e-6);
        assert!((v - 4.0 * per_pixel).abs() < 1e-9, "{v}");
    }

    #[test]
    fn nll_one_hot_ignores_other_component() {
        let x = t(&[0.2], &[1, 1, 1, 1]);
        let m = masks(&[1.0, 0.0], &[1, 2, 1, 1]);
        let single = {
            let s: f64 = 0.09;
            let e: f64 = (0.2 - 0.15) * (0.2 - 0.15);
            s.ln() + 0.5 * (2.0 * std::f64::consts::PI).ln() + e / (2.0 * s * s)
        };
        for other in [-1.0, 0.0, 0.4, 0.9] {
            let comps = t(&[0.15, other], &[1, 2, 1, 1, 1]);
            let v = val(&nll_loss(&x, &m, &comps, &[0.09, 0.09]).unwrap());
            assert!((v - single).abs() < 1e-6, "other={other}: {v} vs {single}");
        }
    }

    #[test]
    fn nll_rejects_all_zero_pixel() {
        let x = t(&[0.2], &[1, 1, 1, 1]);
        let m = AttentionMaskSet::from_log(t(&[f64::NEG_INFINITY, f64::NEG_INFINITY], &[1, 2, 1, 1]));
        let comps = t(&[0.0, 0.0], &[1, 2, 1, 1, 1]);
        assert!(matches!(nll_loss(&x, &m, &comps, &[0.1, 0.1]), Err(LabError::Invariant(_))));
    }

    #[test]
    fn ir_image_cases() {
        let m = masks(&[0.25, 0.75], &[1, 2, 1, 1]);
        let comps = t(&[0.0, 1.0], &[1, 2, 1, 1, 1]);
        assert!((val(&ir_image(&m, &comps).unwrap().flatten_all().unwrap().sum_all().unwrap()) - 0.75).abs() < 1e-12);

        let m = masks(&[0.1, 0.6, 0.9, 0.4], &[1, 2, 1, 2]);
        let comps = t(&[0.3, 0.3, 0.3, 0.3], &[1, 2, 1, 1, 2]);
        let v = ir_image(&m, &comps).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert!(v.iter().all(|&p| (p - 0.3).abs() < 1e-12));
    }

    #[test]
    fn ir_loss_perfect_and_homogeneity() {
        let x = t(&[0.1, 0.2, 0.3, 0.4], &[1, 1, 2, 2]);
        let v = val(&ir_loss(&x, &x, 0.09).unwrap());
        assert!((v - 4.0 * (0.09 * (2.0 * std::f64::consts::PI).sqrt()).ln()).abs() < 1e-9);

        let y = t(&[0.0, 0.25, 0.2, 0.5], &[1, 1, 2, 2]);
        let y2 = (&x + ((&y - &x).unwrap() * 2.0).unwrap()).unwrap();
        let c = val(&ir_loss(&x, &x, 0.09).unwrap());
        let a = val(&ir_loss(&x, &y, 0.09).unwrap()) - c;
        let b = val(&ir_loss(&x, &y2, 0.09).unwrap()) - c;
        assert!((b - 4.0 * a).abs() < 1e-9);
    }

    #[test]
    fn mse_cases() {
        let x = t(&[0.1, 0.2, 0.3], &[1, 3, 1, 1]);
        assert_eq!(val(&mse_loss(&x, &x).unwrap()), 0.0);
        let y = (&x + 0.1).unwrap();
        assert!((val(&mse_loss(&x, &y).unwrap()) - 0.01).abs() < 1e-12);
        let z = t(&[0.1, 0.2], &[1, 2, 1, 1]);
        assert!(matches!(mse_loss(&x, &z), Err(LabError::Shape(_))));
    }

    #[test]
    fn mw_cases() {
        let x = t(&[0.0], &[1, 1, 1, 1]);
        let m = masks(&[0.5, 0.5], &[1, 2, 1, 1]);
        let comps = t(&[0.2, 0.4], &[1, 2, 1, 1, 1]);
        assert!((val(&mw_loss(&x, &m, &comps).unwrap()) - 0.10).abs() < 1e-12);
        let comps = t(&[0.0, 0.0], &[1, 2, 1, 1, 1]);
        assert_eq!(val(&mw_loss(&x, &m, &comps).unwrap()), 0.0);
    }

    #[test]
    fn latent_kl_cases() {
        let post = LatentPosterior {
            mean: t(&[0.0, 0.0, 0.0], &[1, 3]),
            std: t(&[1.0, 1.0, 1.0], &[1, 3]),
        };
        assert!(val(&latent_kl(&post).unwrap()).abs() < 1e-15);
        let post = LatentPosterior {
            mean: t(&[1.0], &[1, 1]),
            std: t(&[1.0], &[1, 1]),
        };
        assert!((val(&latent_kl(&post).unwrap()) - 0.5).abs() < 1e-15);
        let post = LatentPosterior {
            mean: t(&[1.0], &[1, 1]),
            std: t(&[0.0], &[1, 1]),
        };
        assert!(matches!(latent_kl(&post), Err(LabError::Invariant(_))));
    }

    #[test]
    fn mask_kl_cases() {
        let m = masks(&[0.3, 0.7], &[1, 2, 1, 1]);
        assert!(val(&mask_kl(&m, &m.log_masks).unwrap()).abs() < 1e-15);
        let m = masks(&[1.0, 0.0], &[1, 2, 1, 1]);
        let r = t(&[0.5f64.ln(), 0.5f64.ln()], &[1, 2, 1, 1]);
        assert!((val(&mask_kl(&m, &r).unwrap()) - 2f64.ln()).abs() < 1e-8);
        let bad = t(&[0.9f64.ln(), 0.9f64.ln()], &[1, 2, 1, 1]);
        assert!(matches!(mask_kl(&m, &bad), Err(LabError::Invariant(_))));
    }

    #[test]
    fn mask_mse_cases() {
        let m = masks(&[1.0, 0.0], &[1, 2, 1, 1]);
        let r = t(&[0.5, 0.5], &[1, 2, 1, 1]);
        assert!((val(&mask_mse(&m, &r).unwrap()) - 0.5).abs() < 1e-9);
        assert!(val(&mask_mse(&m, &m.masks().unwrap()).unwrap()).abs() < 1e-15);
        let swapped = val(&mask_mse(&AttentionMaskSet::from_probabilities(&r).unwrap(), &m.masks().unwrap()).unwrap());
        assert!((swapped - 0.5).abs() < 1e-9);
        let wrong = t(&[0.5, 0.5, 0.0, 0.0], &[1, 2, 1, 2]);
        assert!(matches!(mask_mse(&m, &wrong), Err(LabError::Shape(_))));
    }

    #[test]
    fn config_rules() {
        let mut c = LossConfig::monet_original();
        assert!(c.validate().is_ok());
        c.eps_mode = EpsMode::Zero;
        assert!(matches!(c.validate(), Err(LabError::Config { field, .. }) if field == "eps_mode"));
        c.beta = 0.0;
        assert!(c.validate().is_ok());
        c.sigma_x = Some(vec![0.1, -0.2]);
        assert!(c.validate().is_err());
        let c = LossConfig::monet_original();
        assert_eq!(c.resolved_sigma(3).unwrap(), vec![0.11, 0.09, 0.09]);
        let ir = LossConfig {
            recon_term: ReconTerm::Ir,
            ..LossConfig::monet_original()
        };
        assert_eq!(ir.resolved_sigma(4).unwrap(), vec![0.09]);
    }

    #[test]
    fn config_json_keys() {
        let c = LossConfig::monet_original();
        let v = serde_json::to_value(&c).unwrap();
        for key in ["recon_term", "mask_term", "beta", "gamma", "sigma_x", "eps_mode"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["recon_term"], "NLL");
        assert_eq!(v["mask_term"], "KL");
        let back: LossConfig = serde_json::from_value(v).unwrap();
        assert_eq!(back, c);
    }
}
