//! Training loop with convergence-based early termination.
//!
//! Every `check_interval` optimizer steps the model is evaluated on the eval
//! split with the latent noise switched off. Training stops once the
//! integrated-reconstruction MSE is below `mse_threshold` and has stopped
//! improving: `mse_t / mse_{t − check_interval} > ratio_threshold`.

mod checkpoint;
pub mod optim;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::DType;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use checkpoint::{load_params, read_meta, CheckpointMeta, CHECKPOINT_FILE, META_FILE};
pub use optim::{Optimizer, OptimizerKind};

use crate::error::{LabError, Result};
use crate::losses::{total_loss, LossBreakdown, LossConfig};
use crate::metrics::{ari, binarization_index, masks_to_labels, LabelMap};
use crate::model::{images_to_tensor, EpsMode, ModelConfig, Monet};
use crate::seed;
use crate::synthgen::SplitData;

pub const RUN_LOG_FILE: &str = "run.jsonl";
pub const RECORD_FILE: &str = "record.json";
pub const DIVERGED_FILE: &str = "diverged.json";

/// Environment variable selecting the compute device. Only `cpu` is built in.
pub const DEVICE_ENV: &str = "MONET_DEVICE";
/// Environment variable requesting bit-reproducible execution.
pub const DETERMINISTIC_ENV: &str = "MONET_DETERMINISTIC";

/// Resolve the compute device from [`DEVICE_ENV`].
pub fn device_from_env() -> Result<candle_core::Device> {
    match std::env::var(DEVICE_ENV) {
        Err(_) => Ok(candle_core::Device::Cpu),
        Ok(v) if v.eq_ignore_ascii_case("cpu") || v.is_empty() => Ok(candle_core::Device::Cpu),
        Ok(v) => Err(LabError::config(DEVICE_ENV, format!("unsupported device `{v}`; this build supports `cpu`"))),
    }
}

pub fn deterministic_from_env() -> bool {
    matches!(std::env::var(DETERMINISTIC_ENV).as_deref(), Ok("1") | Ok("true") | Ok("yes"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AriPooling {
    /// Mean of per-image ARIs.
    #[default]
    Mean,
    /// Median of per-image ARIs.
    Median,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub max_steps: u64,
    pub check_interval: u64,
    /// `l`: the MSE must fall below this before training may stop.
    pub mse_threshold: f64,
    pub ratio_threshold: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Extra evaluations between termination checks (0 disables them).
    pub eval_interval: u64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Stop early once converged; when false always run `max_steps`.
    pub early_stop: bool,
    /// Evaluate on at most this many eval images.
    pub eval_limit: Option<usize>,
    pub eval_batch_size: usize,
    pub ari_pooling: AriPooling,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_steps: 50_000,
            check_interval: 2_000,
            mse_threshold: 0.001,
            ratio_threshold: 0.99,
            batch_size: 64,
            learning_rate: 1e-4,
            eval_interval: 0,
            seed: 1,
            optimizer: OptimizerKind::Adam,
            early_stop: true,
            eval_limit: None,
            eval_batch_size: 100,
            ari_pooling: AriPooling::Mean,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.check_interval == 0 {
            return Err(LabError::config("train.check_interval", "must be positive"));
        }
        if self.max_steps > 0 && self.check_interval > self.max_steps {
            return Err(LabError::config("train.check_interval", "must not exceed max_steps"));
        }
        if !(self.mse_threshold > 0.0) {
            return Err(LabError::config("train.mse_threshold", "must be positive"));
        }
        if !(self.ratio_threshold > 0.0) {
            return Err(LabError::config("train.ratio_threshold", "must be positive"));
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(LabError::config("train.batch_size", "must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(LabError::config("train.learning_rate", "must be positive"));
        }
        Ok(())
    }
}

/// The termination rule applied at each check.
pub fn should_terminate(mse_curr: f64, mse_prev: Option<f64>, threshold: f64, ratio: f64) -> bool {
    let Some(prev) = mse_prev else {
        return false;
    };
    if !(mse_curr < threshold) {
        return false;
    }
    let r = if prev == 0.0 {
        if mse_curr == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        mse_curr / prev
    };
    r > ratio
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    Converged,
    MaxSteps,
}

/// One evaluation, as written to `run.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: u64,
    /// Whether this evaluation was a termination check.
    pub checked: bool,
    pub losses: LossBreakdown,
    pub mse: f64,
    pub ari: f64,
    pub ari_median: f64,
    pub binarization: f64,
    pub seed: u64,
    pub condition: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub condition: String,
    pub seed: u64,
    pub config_hash: String,
    /// Evaluation before the first update.
    pub initial: EvalPoint,
    pub series: Vec<EvalPoint>,
    pub final_ari: f64,
    pub final_mse: f64,
    pub final_binarization: f64,
    pub termination_step: u64,
    pub reason: TerminationReason,
}

impl RunRecord {
    /// Re-run the termination rule over the recorded checks; returns the step
    /// at which it fires, if any.
    pub fn replay_termination(&self, threshold: f64, ratio: f64) -> Option<u64> {
        let mut prev = None;
        for p in self.series.iter().filter(|p| p.checked) {
            if should_terminate(p.mse, prev, threshold, ratio) {
                return Some(p.step);
            }
            prev = Some(p.mse);
        }
        None
    }
}

/// Everything a run depends on; its hash guards resumption.
#[derive(Debug, Clone, Serialize)]
struct HashedConfig<'a> {
    model: &'a ModelConfig,
    loss: &'a LossConfig,
    train: &'a TrainConfig,
    dataset: &'a str,
}

pub fn config_hash(model: &ModelConfig, loss: &LossConfig, train: &TrainConfig, dataset_hash: &str) -> Result<String> {
    let json = serde_json::to_vec(&HashedConfig {
        model,
        loss,
        train,
        dataset: dataset_hash,
    })?;
    Ok(hex::encode(Sha256::digest(json)))
}

/// Aggregate evaluation over (a prefix of) the eval split.
#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub losses: LossBreakdown,
    pub ari_mean: f64,
    pub ari_median: f64,
    pub binarization: f64,
    pub per_image_ari: Vec<f64>,
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Evaluate `model` with zero latent noise. Foreground ARI excludes truth
/// label 0; images with no foreground pixels are skipped.
pub fn evaluate(model: &Monet, eval: &SplitData, loss: &LossConfig, limit: Option<usize>, batch_size: usize) -> Result<EvalSummary> {
    let n = limit.map_or(eval.len, |l| l.min(eval.len));
    if n == 0 {
        return Err(LabError::config("eval_limit", "evaluation needs at least one image"));
    }
    let dtype = model.dtype();
    let mut acc = LossBreakdown {
        total: 0.0,
        recon: 0.0,
        latent_kl: 0.0,
        mask: 0.0,
        mse_monitor: 0.0,
        reduction: String::new(),
    };
    let mut aris = Vec::with_capacity(n);
    let mut bin_sum = 0.0;
    let indices: Vec<usize> = (0..n).collect();
    for chunk in indices.chunks(batch_size) {
        let batch = eval.gather(chunk);
        let x = images_to_tensor(&batch.images, chunk.len(), eval.height, eval.width, eval.channels, dtype)?;
        let dec = model.forward(&x, EpsMode::Zero, 0)?;
        let out = total_loss(&x, &dec, loss)?;
        let w = chunk.len() as f64;
        let b = &out.breakdown;
        acc.total += b.total * w;
        acc.recon += b.recon * w;
        acc.latent_kl += b.latent_kl * w;
        acc.mask += b.mask * w;
        acc.mse_monitor += b.mse_monitor * w;
        acc.reduction = b.reduction.clone();
        let masks = dec.masks.masks()?.to_dtype(DType::F64)?;
        bin_sum += binarization_index(&masks)?.iter().sum::<f64>();
        for (i, pred) in masks_to_labels(&masks)?.into_iter().enumerate() {
            let truth = LabelMap::from_u8(eval.height, eval.width, &batch.labels[i * eval.label_len()..(i + 1) * eval.label_len()])?;
            match ari(&pred, &truth, &[0]) {
                Ok(s) => aris.push(s.value),
                Err(LabError::Degenerate(_)) => {}
                Err(e) => return Err(e),
            }
        }
    }
    let nf = n as f64;
    acc.total /= nf;
    acc.recon /= nf;
    acc.latent_kl /= nf;
    acc.mask /= nf;
    acc.mse_monitor /= nf;
    let ari_mean = if aris.is_empty() { f64::NAN } else { aris.iter().sum::<f64>() / aris.len() as f64 };
    let ari_median = median(&mut aris.clone());
    Ok(EvalSummary {
        losses: acc,
        ari_mean,
        ari_median,
        binarization: bin_sum / nf,
        per_image_ari: aris,
    })
}

/// Mutable training state for one run.
pub struct Trainer<'a> {
    model: Monet,
    loss: LossConfig,
    cfg: TrainConfig,
    train: &'a SplitData,
    eval: &'a SplitData,
    out_dir: Option<PathBuf>,
    condition: String,
    config_hash: String,
    optimizer: Optimizer,
    step: u64,
    initial: Option<EvalPoint>,
    series: Vec<EvalPoint>,
    epoch_cache: Option<(u64, Vec<Vec<usize>>)>,
}

impl<'a> Trainer<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: Monet,
        train: &'a SplitData,
        eval: &'a SplitData,
        loss: LossConfig,
        cfg: TrainConfig,
        dataset_hash: &str,
        condition: impl Into<String>,
        out_dir: Option<&Path>,
    ) -> Result<Self> {
        loss.validate()?;
        cfg.validate()?;
        device_from_env()?;
        if train.len == 0 {
            return Err(LabError::config("dataset", "train split is empty"));
        }
        let m = model.config();
        if (train.height, train.width, train.channels) != (m.image_size, m.image_size, m.channels) {
            return Err(LabError::Shape(format!(
                "dataset images are {}×{}×{}, model expects {}×{}×{}",
                train.height, train.width, train.channels, m.image_size, m.image_size, m.channels
            )));
        }
        loss.resolved_sigma(m.slots)?;
        let config_hash = config_hash(m, &loss, &cfg, dataset_hash)?;
        let optimizer = Optimizer::new(cfg.optimizer, model.params().named(), cfg.learning_rate)?;
        if let Some(dir) = out_dir {
            fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
        }
        Ok(Trainer {
            model,
            loss,
            cfg,
            train,
            eval,
            out_dir: out_dir.map(Path::to_path_buf),
            condition: condition.into(),
            config_hash,
            optimizer,
            step: 0,
            initial: None,
            series: Vec::new(),
            epoch_cache: None,
        })
    }

    pub fn model(&self) -> &Monet {
        &self.model
    }

    pub fn into_model(self) -> Monet {
        self.model
    }

    /// Completed optimizer steps.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    fn batch_indices(&mut self, step: u64) -> Vec<usize> {
        let per_epoch = self.train.batches_per_epoch(self.cfg.batch_size) as u64;
        let epoch = step / per_epoch;
        let data_seed = seed::derive(self.cfg.seed, seed::DATA_ORDER, &[]);
        if self.epoch_cache.as_ref().map(|c| c.0) != Some(epoch) {
            let batches = self.train.epoch_batches(self.cfg.batch_size, data_seed, epoch);
            self.epoch_cache = Some((epoch, batches));
        }
        let (_, batches) = self.epoch_cache.as_ref().expect("cache filled above");
        batches[(step % per_epoch) as usize].clone()
    }

    fn eval_point(&self, checked: bool) -> Result<EvalPoint> {
        let s = evaluate(&self.model, self.eval, &self.loss, self.cfg.eval_limit, self.cfg.eval_batch_size)?;
        let ari = match self.cfg.ari_pooling {
            AriPooling::Mean => s.ari_mean,
            AriPooling::Median => s.ari_median,
        };
        Ok(EvalPoint {
            step: self.step,
            checked,
            mse: s.losses.mse_monitor,
            losses: s.losses,
            ari,
            ari_median: s.ari_median,
            binarization: s.binarization,
            seed: self.cfg.seed,
            condition: self.condition.clone(),
        })
    }

    fn log_point(&self, p: &EvalPoint) -> Result<()> {
        let Some(dir) = &self.out_dir else {
            return Ok(());
        };
        let path = dir.join(RUN_LOG_FILE);
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| LabError::io(&path, e))?;
        let line = serde_json::to_string(p)?;
        writeln!(f, "{line}").map_err(|e| LabError::io(&path, e))?;
        Ok(())
    }

    fn save_checkpoint(&self) -> Result<()> {
        let Some(dir) = &self.out_dir else {
            return Ok(());
        };
        checkpoint::save(dir, &self.model, &self.optimizer, &self.meta())
    }

    fn meta(&self) -> CheckpointMeta {
        let tail_start = self.series.len().saturating_sub(checkpoint::HISTORY_TAIL);
        CheckpointMeta {
            step: self.step,
            config_hash: self.config_hash.clone(),
            condition: self.condition.clone(),
            seed: self.cfg.seed,
            deterministic: deterministic_from_env(),
            initial: self.initial.clone(),
            loss_history_tail: self.series[tail_start..].to_vec(),
        }
    }

    fn one_step(&mut self) -> Result<LossBreakdown> {
        let indices = self.batch_indices(self.step);
        let batch = self.train.gather(&indices);
        let x = images_to_tensor(&batch.images, indices.len(), self.train.height, self.train.width, self.train.channels, self.model.dtype())?;
        let noise_seed = seed::derive(self.cfg.seed, seed::LATENT_NOISE, &[self.step]);
        let dec = self.model.forward(&x, self.loss.eps_mode, noise_seed)?;
        let out = total_loss(&x, &dec, &self.loss)?;
        if !out.breakdown.total.is_finite() {
            let norm = self.model.params().global_norm().unwrap_or(f64::NAN);
            let snapshot = serde_json::json!({
                "step": self.step + 1,
                "breakdown": out.breakdown,
                "parameter_norm": norm,
            });
            if let Some(dir) = &self.out_dir {
                let _ = fs::write(dir.join(DIVERGED_FILE), snapshot.to_string());
            }
            return Err(LabError::Diverged {
                step: self.step + 1,
                message: snapshot.to_string(),
            });
        }
        let grads = out.total.backward()?;
        self.optimizer.step(&grads)?;
        self.step += 1;
        Ok(out.breakdown)
    }

    /// Train until convergence, `max_steps`, or `halt_at` completed steps,
    /// whichever comes first. Halting leaves a checkpoint and returns `None`.
    pub fn run(&mut self, halt_at: Option<u64>) -> Result<Option<RunRecord>> {
        if self.initial.is_none() {
            let p = self.eval_point(false)?;
            self.initial = Some(p);
        }
        let mut reason = TerminationReason::MaxSteps;
        let mut prev_check = self.series.iter().rev().find(|p| p.checked).map(|p| p.mse);
        while self.step < self.cfg.max_steps {
            if halt_at.is_some_and(|h| self.step >= h) {
                self.save_checkpoint()?;
                return Ok(None);
            }
            let train_losses = self.one_step()?;
            let is_check = self.step.is_multiple_of(self.cfg.check_interval);
            let is_eval = self.cfg.eval_interval > 0 && self.step.is_multiple_of(self.cfg.eval_interval);
            let is_last = self.step == self.cfg.max_steps;
            if !(is_check || is_eval || is_last) {
                continue;
            }
            let point = self.eval_point(is_check)?;
            log::info!(
                "[{} seed {}] step {} train {:.4} eval mse {:.5} ari {:.3} bin {:.3}",
                self.condition,
                self.cfg.seed,
                self.step,
                train_losses.total,
                point.mse,
                point.ari,
                point.binarization
            );
            self.log_point(&point)?;
            let stop = is_check && self.cfg.early_stop && should_terminate(point.mse, prev_check, self.cfg.mse_threshold, self.cfg.ratio_threshold);
            if is_check {
                prev_check = Some(point.mse);
            }
            self.series.push(point);
            if is_check {
                self.save_checkpoint()?;
            }
            if stop {
                reason = TerminationReason::Converged;
                break;
            }
        }
        self.save_checkpoint()?;
        let record = self.finish(reason)?;
        Ok(Some(record))
    }

    fn finish(&self, reason: TerminationReason) -> Result<RunRecord> {
        let initial = self.initial.clone().expect("initial evaluation precedes training");
        let last = match self.series.last() {
            Some(p) if p.step == self.step => p.clone(),
            _ => self.eval_point(false)?,
        };
        let record = RunRecord {
            condition: self.condition.clone(),
            seed: self.cfg.seed,
            config_hash: self.config_hash.clone(),
            initial,
            series: self.series.clone(),
            final_ari: last.ari,
            final_mse: last.mse,
            final_binarization: last.binarization,
            termination_step: self.step,
            reason,
        };
        if let Some(dir) = &self.out_dir {
            let path = dir.join(RECORD_FILE);
            fs::write(&path, serde_json::to_string_pretty(&record)?).map_err(|e| LabError::io(&path, e))?;
        }
        Ok(record)
    }

    /// Restore parameters, optimizer moments and history from `dir`.
    pub fn restore(&mut self, dir: &Path) -> Result<()> {
        let meta = checkpoint::read_meta(dir)?;
        if meta.config_hash != self.config_hash {
            return Err(LabError::ConfigHashMismatch(format!(
                "checkpoint {} was written for config {}, current config is {}",
                dir.display(),
                meta.config_hash,
                self.config_hash
            )));
        }
        checkpoint::load_tensors(dir, &self.model, &mut self.optimizer, meta.step)?;
        self.step = meta.step;
        self.initial = meta.initial.clone();
        self.series = read_run_log(dir)?
            .into_iter()
            .filter(|p| p.step <= meta.step)
            .collect();
        // Drop evaluations logged after the checkpoint so the log matches the
        // restored state.
        if dir.join(RUN_LOG_FILE).exists() {
            let path = dir.join(RUN_LOG_FILE);
            let mut text = String::new();
            for p in &self.series {
                text.push_str(&serde_json::to_string(p)?);
                text.push('\n');
            }
            fs::write(&path, text).map_err(|e| LabError::io(&path, e))?;
        }
        self.out_dir = Some(dir.to_path_buf());
        Ok(())
    }
}

/// Read every evaluation in a run's `run.jsonl` (missing file → empty).
pub fn read_run_log(dir: &Path) -> Result<Vec<EvalPoint>> {
    let path = dir.join(RUN_LOG_FILE);
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(&path).map_err(|e| LabError::io(&path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| LabError::Data {
                index: i,
                message: format!("{}: {e}", path.display()),
            })
        })
        .collect()
}

pub fn read_record(dir: &Path) -> Result<RunRecord> {
    let path = dir.join(RECORD_FILE);
    let text = fs::read_to_string(&path).map_err(|e| LabError::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Train a freshly initialized model for one (condition, seed) pair.
#[allow(clippy::too_many_arguments)]
pub fn train(
    model: Monet,
    train_split: &SplitData,
    eval_split: &SplitData,
    dataset_hash: &str,
    loss: &LossConfig,
    cfg: &TrainConfig,
    condition: &str,
    out_dir: Option<&Path>,
) -> Result<RunRecord> {
    let mut t = Trainer::new(model, train_split, eval_split, loss.clone(), cfg.clone(), dataset_hash, condition, out_dir)?;
    Ok(t.run(None)?.expect("no halt requested"))
}

/// Continue the run checkpointed in `dir`.
#[allow(clippy::too_many_arguments)]
pub fn resume(
    dir: &Path,
    model_cfg: &ModelConfig,
    train_split: &SplitData,
    eval_split: &SplitData,
    dataset_hash: &str,
    loss: &LossConfig,
    cfg: &TrainConfig,
    condition: &str,
) -> Result<RunRecord> {
    let model = Monet::new(model_cfg.clone(), cfg.seed)?;
    let mut t = Trainer::new(model, train_split, eval_split, loss.clone(), cfg.clone(), dataset_hash, condition, Some(dir))?;
    t.restore(dir)?;
    Ok(t.run(None)?.expect("no halt requested"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn termination_rule_examples() {
        assert!(should_terminate(0.0008, Some(0.0008005), 0.001, 0.99));
        assert!(!should_terminate(0.002, Some(0.002), 0.001, 0.99));
        assert!(!should_terminate(0.0005, Some(0.001), 0.001, 0.99));
        assert!(!should_terminate(0.0005, None, 0.001, 0.99));
        assert!(should_terminate(0.0005, Some(0.0), 0.001, 0.99));
        assert!(!should_terminate(0.002, Some(0.0), 0.001, 0.99));
    }

    #[test]
    fn train_config_validation() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        c.check_interval = c.max_steps + 1;
        assert!(c.validate().is_err());
        let c = TrainConfig {
            mse_threshold: 0.0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [0.6, 0.8, 0.7]), 0.7);
        assert_eq!(median(&mut [1.0, 0.0, 3.0, 2.0]), 1.5);
    }
}
