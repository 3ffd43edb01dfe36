//! Multi-condition, multi-seed experiments and their statistics.
//!
//! Runs are stored under `<out>/runs/<condition>/seed_<n>/`; optional
//! full-length reference runs go under `<out>/reference/`. A pair whose
//! `record.json` matches the expected config hash is never retrained.

pub mod probe;
pub mod stats;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use probe::{winner_take_all_probe, ProbeConfig, ProbeLoss, ProbeResult};
pub use stats::{friedman_test, holm_bonferroni, wilcoxon_signed_rank, Correction, PMethod, TestResult};

use crate::error::{LabError, Result};
use crate::losses::{LossConfig, MaskKlForm, MaskTerm, ReconTerm, DEFAULT_SIGMA_IR};
use crate::model::{EpsMode, ModelConfig, Monet};
use crate::synthgen::{DatasetHandle, Split, SplitData};
use crate::trainer::{self, config_hash, RunRecord, TrainConfig, META_FILE, RECORD_FILE};

/// Environment variable overriding the worker budget.
pub const WORKERS_ENV: &str = "MONET_WORKERS";
pub const EXPERIMENT_FILE: &str = "experiment.json";
pub const ERROR_FILE: &str = "error.json";
pub const RUNS_DIR: &str = "runs";
pub const REFERENCE_DIR: &str = "reference";

/// Which dataset family the mask-MSE weight is tuned for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetFlavor {
    #[default]
    MultiDsprites,
    ObjectsRoom,
}

impl DatasetFlavor {
    pub fn mask_mse_gamma(self) -> f64 {
        match self {
            DatasetFlavor::MultiDsprites => 0.01,
            DatasetFlavor::ObjectsRoom => 0.1,
        }
    }

    /// Convergence threshold `l` for the termination rule.
    pub fn mse_threshold(self) -> f64 {
        match self {
            DatasetFlavor::MultiDsprites => 0.001,
            DatasetFlavor::ObjectsRoom => 0.005,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Ablation2x2,
    LossReplacement,
    MwComparison,
}

impl Preset {
    pub fn condition_ids(self) -> &'static [&'static str] {
        match self {
            Preset::Ablation2x2 => &["11", "01", "10", "00"],
            Preset::LossReplacement => &["NLL+M", "IR+M"],
            Preset::MwComparison => &["MSE+M", "MW+M", "NLL+M"],
        }
    }

    pub fn conditions(self, flavor: DatasetFlavor) -> Result<Vec<ExperimentCondition>> {
        self.condition_ids().iter().map(|id| ExperimentCondition::preset(id, flavor)).collect()
    }
}

impl std::str::FromStr for Preset {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ablation-2x2" => Ok(Preset::Ablation2x2),
            "loss-replacement" => Ok(Preset::LossReplacement),
            "mw-comparison" => Ok(Preset::MwComparison),
            other => Err(LabError::config("preset", format!("unknown preset `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentCondition {
    pub id: String,
    pub loss: LossConfig,
    /// Partial `TrainConfig` merged over the experiment's trainer settings.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_overrides: Option<Value>,
}

fn loss(recon: ReconTerm, mask: MaskTerm, beta: f64, gamma: f64) -> LossConfig {
    LossConfig {
        recon_term: recon,
        mask_term: mask,
        beta,
        gamma,
        sigma_x: None,
        eps_mode: if beta > 0.0 { EpsMode::Stochastic } else { EpsMode::Zero },
        mask_kl_form: MaskKlForm::Categorical,
    }
}

impl ExperimentCondition {
    /// Built-in condition by id.
    pub fn preset(id: &str, flavor: DatasetFlavor) -> Result<Self> {
        let g = flavor.mask_mse_gamma();
        let loss = match id {
            "11" => loss(ReconTerm::Nll, MaskTerm::Kl, 0.5, 0.25),
            "01" | "NLL+M" => loss(ReconTerm::Nll, MaskTerm::Kl, 0.0, 0.25),
            "10" => loss(ReconTerm::Nll, MaskTerm::Kl, 0.5, 0.0),
            "00" => loss(ReconTerm::Nll, MaskTerm::Kl, 0.0, 0.0),
            "IR+M" => LossConfig {
                sigma_x: Some(vec![DEFAULT_SIGMA_IR]),
                ..loss(ReconTerm::Ir, MaskTerm::Kl, 0.0, 0.25)
            },
            "MSE+M" => loss(ReconTerm::Mse, MaskTerm::Mse, 0.0, g),
            "MW+M" => loss(ReconTerm::Mw, MaskTerm::Mse, 0.0, g),
            other => return Err(LabError::config("conditions", format!("unknown preset condition `{other}`"))),
        };
        Ok(ExperimentCondition {
            id: id.to_string(),
            loss,
            train_overrides: None,
        })
    }

    pub fn train_config(&self, base: &TrainConfig, seed: u64) -> Result<TrainConfig> {
        let mut cfg = match &self.train_overrides {
            Some(patch) => apply_overrides(base, patch)?,
            None => base.clone(),
        };
        cfg.seed = seed;
        Ok(cfg)
    }
}

/// Deep-merge `patch` into `base`.
pub fn merge_json(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, p) => *slot = p.clone(),
    }
}

/// Apply a partial JSON document to a config; unknown keys are errors.
pub fn apply_overrides<T: Serialize + for<'de> Deserialize<'de>>(base: &T, patch: &Value) -> Result<T> {
    let mut v = serde_json::to_value(base)?;
    merge_json(&mut v, patch);
    Ok(serde_json::from_value(v)?)
}

/// A condition in an experiment file: a preset id, optionally with an inline
/// loss and trainer overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionSpec {
    pub id: String,
    #[serde(default)]
    pub loss: Option<LossConfig>,
    #[serde(default)]
    pub train: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub preset: Option<Preset>,
    #[serde(default)]
    pub conditions: Vec<ConditionSpec>,
    #[serde(default)]
    pub flavor: DatasetFlavor,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    /// When set, also train each pair for `factor × max_steps` without early
    /// stopping, for the termination-difference table.
    #[serde(default)]
    pub reference_factor: Option<u64>,
}

fn default_seeds() -> Vec<u64> {
    (1..=5).collect()
}

fn default_parallelism() -> usize {
    1
}

impl ExperimentConfig {
    pub fn new(dataset: impl Into<PathBuf>) -> Self {
        ExperimentConfig {
            dataset: dataset.into(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            preset: None,
            conditions: Vec::new(),
            flavor: DatasetFlavor::default(),
            seeds: default_seeds(),
            parallelism: default_parallelism(),
            reference_factor: None,
        }
    }

    /// Preset conditions followed by the explicitly listed ones.
    pub fn resolve_conditions(&self) -> Result<Vec<ExperimentCondition>> {
        let mut out = match self.preset {
            Some(p) => p.conditions(self.flavor)?,
            None => Vec::new(),
        };
        for spec in &self.conditions {
            let mut c = match &spec.loss {
                Some(l) => ExperimentCondition {
                    id: spec.id.clone(),
                    loss: l.clone(),
                    train_overrides: None,
                },
                None => ExperimentCondition::preset(&spec.id, self.flavor)?,
            };
            c.train_overrides = spec.train.clone();
            out.push(c);
        }
        let mut seen = BTreeSet::new();
        for c in &out {
            if !seen.insert(c.id.as_str()) {
                return Err(LabError::config("conditions", format!("duplicate condition id `{}`", c.id)));
            }
            if c.id.is_empty() || c.id.contains(['/', '\\']) || c.id.starts_with('.') {
                return Err(LabError::config("conditions", format!("`{}` is not usable as a directory name", c.id)));
            }
            c.loss.validate()?;
        }
        if out.is_empty() {
            return Err(LabError::config("conditions", "no conditions given"));
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.seeds.is_empty() {
            return Err(LabError::config("seeds", "no seeds given"));
        }
        let unique: BTreeSet<_> = self.seeds.iter().collect();
        if unique.len() != self.seeds.len() {
            return Err(LabError::config("seeds", "duplicate seeds"));
        }
        if self.parallelism == 0 {
            return Err(LabError::config("parallelism", "must be positive"));
        }
        if self.reference_factor == Some(0) {
            return Err(LabError::config("reference_factor", "must be positive"));
        }
        self.resolve_conditions().map(|_| ())
    }
}

/// Worker budget: the environment override wins over the config value.
pub fn worker_budget(configured: usize) -> Result<usize> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) if !v.is_empty() => match v.parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(LabError::config(WORKERS_ENV, format!("`{v}` is not a positive integer"))),
        },
        _ => Ok(configured.max(1)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub condition: String,
    pub seeds: Vec<u64>,
    pub final_ari: Vec<f64>,
    pub final_mse: Vec<f64>,
    pub termination_steps: Vec<u64>,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    /// Seeds whose ARI lies beyond 1.5 IQR of the quartiles.
    pub outliers: Vec<u64>,
    pub failures: Vec<RunFailure>,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(values: &[f64]) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    quantile(&s, 0.5)
}

impl ConditionResult {
    pub fn from_records(condition: &str, records: &[RunRecord], failures: Vec<RunFailure>) -> Self {
        let mut records: Vec<&RunRecord> = records.iter().collect();
        records.sort_by_key(|r| r.seed);
        let final_ari: Vec<f64> = records.iter().map(|r| r.final_ari).collect();
        let mut sorted = final_ari.clone();
        sorted.sort_by(f64::total_cmp);
        let (q1, q3) = (quantile(&sorted, 0.25), quantile(&sorted, 0.75));
        let iqr = q3 - q1;
        let outliers = records
            .iter()
            .filter(|r| r.final_ari < q1 - 1.5 * iqr || r.final_ari > q3 + 1.5 * iqr)
            .map(|r| r.seed)
            .collect();
        ConditionResult {
            condition: condition.to_string(),
            seeds: records.iter().map(|r| r.seed).collect(),
            final_ari,
            final_mse: records.iter().map(|r| r.final_mse).collect(),
            termination_steps: records.iter().map(|r| r.termination_step).collect(),
            median: quantile(&sorted, 0.5),
            q1,
            q3,
            outliers,
            failures,
        }
    }

    pub fn ari_for(&self, seed: u64) -> Option<f64> {
        self.seeds.iter().position(|s| *s == seed).map(|i| self.final_ari[i])
    }
}

pub fn run_dir(root: &Path, condition: &str, seed: u64) -> PathBuf {
    root.join(condition).join(format!("seed_{seed}"))
}

struct Job<'a> {
    condition: &'a ExperimentCondition,
    seed: u64,
    dir: PathBuf,
    train: TrainConfig,
}

enum Outcome {
    Done(Box<RunRecord>),
    Failed(String),
}

fn run_job(job: &Job<'_>, model_cfg: &ModelConfig, train: &SplitData, eval: &SplitData, dataset_hash: &str) -> Result<RunRecord> {
    let loss = &job.condition.loss;
    let expected = config_hash(model_cfg, loss, &job.train, dataset_hash)?;
    let record_path = job.dir.join(RECORD_FILE);
    if record_path.exists() {
        let record = trainer::read_record(&job.dir)?;
        if record.config_hash == expected {
            log::info!("[{} seed {}] already complete", job.condition.id, job.seed);
            return Ok(record);
        }
        return Err(LabError::ConfigHashMismatch(format!(
            "{} holds a run for config {}, expected {expected}",
            job.dir.display(),
            record.config_hash
        )));
    }
    let _ = fs::remove_file(job.dir.join(ERROR_FILE));
    if job.dir.join(META_FILE).exists() {
        return trainer::resume(&job.dir, model_cfg, train, eval, dataset_hash, loss, &job.train, &job.condition.id);
    }
    let model = Monet::new(model_cfg.clone(), job.seed)?;
    trainer::train(model, train, eval, dataset_hash, loss, &job.train, &job.condition.id, Some(&job.dir))
}

/// Train and evaluate every (condition, seed) pair under `root`, skipping
/// pairs that already have a matching record.
#[allow(clippy::too_many_arguments)]
pub fn run_pairs(
    conditions: &[ExperimentCondition],
    seeds: &[u64],
    model_cfg: &ModelConfig,
    base_train: &TrainConfig,
    train: &SplitData,
    eval: &SplitData,
    dataset_hash: &str,
    root: &Path,
    workers: usize,
) -> Result<Vec<ConditionResult>> {
    let mut jobs = VecDeque::new();
    for c in conditions {
        for &seed in seeds {
            jobs.push_back(Job {
                condition: c,
                seed,
                dir: run_dir(root, &c.id, seed),
                train: c.train_config(base_train, seed)?,
            });
        }
    }
    let total = jobs.len();
    let queue = Mutex::new(jobs);
    let outcomes: Mutex<Vec<(String, u64, Outcome)>> = Mutex::new(Vec::with_capacity(total));
    std::thread::scope(|s| {
        for _ in 0..workers.max(1).min(total.max(1)) {
            s.spawn(|| loop {
                let Some(job) = queue.lock().expect("queue lock").pop_front() else {
                    break;
                };
                let outcome = match run_job(&job, model_cfg, train, eval, dataset_hash) {
                    Ok(r) => Outcome::Done(Box::new(r)),
                    Err(e) => {
                        log::warn!("[{} seed {}] failed: {e}", job.condition.id, job.seed);
                        let _ = fs::create_dir_all(&job.dir);
                        let body = serde_json::json!({ "condition": job.condition.id, "seed": job.seed, "error": e.to_string() });
                        let _ = fs::write(job.dir.join(ERROR_FILE), body.to_string());
                        Outcome::Failed(e.to_string())
                    }
                };
                outcomes.lock().expect("outcome lock").push((job.condition.id.clone(), job.seed, outcome));
            });
        }
    });
    let outcomes = outcomes.into_inner().expect("outcome lock");
    let mut results = Vec::with_capacity(conditions.len());
    for c in conditions {
        let mut records = Vec::new();
        let mut failures = Vec::new();
        for (id, seed, o) in &outcomes {
            if *id != c.id {
                continue;
            }
            match o {
                Outcome::Done(r) => records.push((**r).clone()),
                Outcome::Failed(e) => failures.push(RunFailure { seed: *seed, error: e.clone() }),
            }
        }
        failures.sort_by_key(|f| f.seed);
        results.push(ConditionResult::from_records(&c.id, &records, failures));
    }
    Ok(results)
}

/// Everything an experiment produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub results: Vec<ConditionResult>,
    pub reference: Option<Vec<ConditionResult>>,
}

/// Resolved experiment echo written next to the runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentEcho {
    pub config: ExperimentConfig,
    pub conditions: Vec<ExperimentCondition>,
    pub dataset_hash: String,
}

pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let conditions = cfg.resolve_conditions()?;
    let handle = DatasetHandle::open(&cfg.dataset)?;
    handle.manifest.spec.validate_for_slots(cfg.model.slots)?;
    let train = handle.load(Split::Train)?;
    let eval = handle.load(Split::Eval)?;
    fs::create_dir_all(out).map_err(|e| LabError::io(out, e))?;
    let echo = ExperimentEcho {
        config: cfg.clone(),
        conditions: conditions.clone(),
        dataset_hash: handle.manifest_hash().to_string(),
    };
    let path = out.join(EXPERIMENT_FILE);
    fs::write(&path, serde_json::to_string_pretty(&echo)?).map_err(|e| LabError::io(&path, e))?;

    let workers = worker_budget(cfg.parallelism)?;
    let results = run_pairs(
        &conditions,
        &cfg.seeds,
        &cfg.model,
        &cfg.train,
        &train,
        &eval,
        handle.manifest_hash(),
        &out.join(RUNS_DIR),
        workers,
    )?;
    let reference = match cfg.reference_factor {
        Some(factor) => {
            let long = TrainConfig {
                max_steps: cfg.train.max_steps * factor,
                early_stop: false,
                ..cfg.train.clone()
            };
            Some(run_pairs(
                &conditions,
                &cfg.seeds,
                &cfg.model,
                &long,
                &train,
                &eval,
                handle.manifest_hash(),
                &out.join(REFERENCE_DIR),
                workers,
            )?)
        }
        None => None,
    };
    Ok(ExperimentOutput { results, reference })
}

/// Read completed runs from `root` (a `runs/` or `reference/` directory).
/// Conditions are ordered as listed in `order` when given, else by name.
pub fn load_results(root: &Path, order: Option<&[String]>) -> Result<Vec<ConditionResult>> {
    let entries = fs::read_dir(root).map_err(|e| LabError::io(root, e))?;
    let mut by_condition: BTreeMap<String, (Vec<RunRecord>, Vec<RunFailure>)> = BTreeMap::new();
    for entry in entries {
        let entry = entry.map_err(|e| LabError::io(root, e))?;
        if !entry.path().is_dir() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        let slot = by_condition.entry(name).or_default();
        let seeds = fs::read_dir(entry.path()).map_err(|e| LabError::io(entry.path(), e))?;
        for s in seeds {
            let s = s.map_err(|e| LabError::io(entry.path(), e))?;
            let dir = s.path();
            let Some(seed) = s.file_name().to_str().and_then(|n| n.strip_prefix("seed_")).and_then(|n| n.parse::<u64>().ok()) else {
                continue;
            };
            if dir.join(RECORD_FILE).exists() {
                slot.0.push(trainer::read_record(&dir)?);
            } else if dir.join(ERROR_FILE).exists() {
                let text = fs::read_to_string(dir.join(ERROR_FILE)).map_err(|e| LabError::io(dir.join(ERROR_FILE), e))?;
                let v: Value = serde_json::from_str(&text)?;
                let error = v.get("error").and_then(Value::as_str).unwrap_or("unknown").to_string();
                slot.1.push(RunFailure { seed, error });
            }
        }
    }
    by_condition.retain(|_, (r, f)| !(r.is_empty() && f.is_empty()));
    let mut names: Vec<String> = by_condition.keys().cloned().collect();
    if let Some(order) = order {
        names.sort_by_key(|n| order.iter().position(|o| o == n).unwrap_or(usize::MAX));
    }
    Ok(names
        .into_iter()
        .map(|n| {
            let (records, mut failures) = by_condition.remove(&n).unwrap_or_default();
            failures.sort_by_key(|f| f.seed);
            ConditionResult::from_records(&n, &records, failures)
        })
        .collect())
}

/// Load the runs of an experiment directory (or a bare runs directory),
/// in the experiment's condition order when the echo is present.
pub fn load_experiment(dir: &Path) -> Result<Vec<ConditionResult>> {
    let echo_path = dir.join(EXPERIMENT_FILE);
    let order = if echo_path.exists() {
        let text = fs::read_to_string(&echo_path).map_err(|e| LabError::io(&echo_path, e))?;
        let echo: ExperimentEcho = serde_json::from_str(&text)?;
        Some(echo.conditions.into_iter().map(|c| c.id).collect::<Vec<_>>())
    } else {
        None
    };
    let runs = if dir.join(RUNS_DIR).is_dir() { dir.join(RUNS_DIR) } else { dir.to_path_buf() };
    let results = load_results(&runs, order.as_deref())?;
    if results.is_empty() {
        return Err(LabError::config("runs", format!("no runs found under {}", runs.display())));
    }
    Ok(results)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub condition: String,
    pub n: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub outliers: Vec<u64>,
    pub failures: Vec<RunFailure>,
}

/// Early-stopped minus full-length final ARI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferenceRow {
    pub condition: String,
    pub difference: f64,
    #[serde(rename = "ratio%")]
    pub ratio_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub conditions: Vec<ConditionSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub differences: Option<Vec<DifferenceRow>>,
}

pub fn summarize(results: &[ConditionResult], reference: Option<&[ConditionResult]>) -> Result<Report> {
    if results.is_empty() {
        return Err(LabError::config("results", "nothing to summarize"));
    }
    let conditions = results
        .iter()
        .map(|r| ConditionSummary {
            condition: r.condition.clone(),
            n: r.seeds.len(),
            median: r.median,
            q1: r.q1,
            q3: r.q3,
            outliers: r.outliers.clone(),
            failures: r.failures.clone(),
        })
        .collect();
    let differences = match reference {
        None => None,
        Some(reference) => {
            let ids: BTreeSet<&str> = results.iter().map(|r| r.condition.as_str()).collect();
            let ref_ids: BTreeSet<&str> = reference.iter().map(|r| r.condition.as_str()).collect();
            if ids != ref_ids {
                return Err(LabError::config(
                    "reference",
                    format!("condition sets differ: {ids:?} vs {ref_ids:?}"),
                ));
            }
            let mut rows = Vec::new();
            for r in results {
                let full = reference.iter().find(|f| f.condition == r.condition).expect("same condition set");
                let diffs: Vec<f64> = r
                    .seeds
                    .iter()
                    .filter_map(|&s| Some(r.ari_for(s)? - full.ari_for(s)?))
                    .collect();
                if diffs.is_empty() {
                    return Err(LabError::Degenerate(format!("no seed of `{}` has both runs", r.condition)));
                }
                let difference = diffs.iter().sum::<f64>() / diffs.len() as f64;
                rows.push(DifferenceRow {
                    condition: r.condition.clone(),
                    difference,
                    ratio_percent: if r.median == 0.0 && difference == 0.0 { 0.0 } else { 100.0 * difference / r.median },
                });
            }
            Some(rows)
        }
    };
    Ok(Report { conditions, differences })
}

impl Report {
    pub fn render(&self) -> String {
        let mut s = format!("{:<10} {:>4} {:>8} {:>8} {:>8}  outliers  failures\n", "condition", "n", "median", "q1", "q3");
        for c in &self.conditions {
            s.push_str(&format!(
                "{:<10} {:>4} {:>8.4} {:>8.4} {:>8.4}  {:<8}  {}\n",
                c.condition,
                c.n,
                c.median,
                c.q1,
                c.q3,
                c.outliers.len(),
                c.failures.len()
            ));
        }
        if let Some(rows) = &self.differences {
            s.push_str(&format!("\n{:<10} {:>11} {:>8}\n", "condition", "difference", "ratio%"));
            for r in rows {
                s.push_str(&format!("{:<10} {:>11.4} {:>8.2}\n", r.condition, r.difference, r.ratio_percent));
            }
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestKind {
    Friedman,
    Wilcoxon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisEntry {
    pub label: String,
    pub conditions: Vec<String>,
    pub statistic: f64,
    pub p_value: f64,
    pub p_display: String,
    pub n: usize,
    pub method: PMethod,
    pub reject: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub test: TestKind,
    pub correction: Correction,
    pub alpha: f64,
    pub entries: Vec<AnalysisEntry>,
}

impl Analysis {
    pub fn render(&self) -> String {
        let mut s = format!(
            "{:?} test, {:?} correction, alpha {}\n{:<28} {:>10} {:>12} {:>4}  decision\n",
            self.test, self.correction, self.alpha, "comparison", "statistic", "p", "n"
        );
        for e in &self.entries {
            s.push_str(&format!(
                "{:<28} {:>10.4} {:>12} {:>4}  {}\n",
                e.label,
                e.statistic,
                e.p_display,
                e.n,
                if e.reject { "reject" } else { "accept" }
            ));
        }
        s
    }
}

/// Seeds present in every listed condition, ascending.
fn common_seeds(results: &[&ConditionResult]) -> Vec<u64> {
    let mut seeds: BTreeSet<u64> = results.first().map(|r| r.seeds.iter().copied().collect()).unwrap_or_default();
    for r in results.iter().skip(1) {
        let s: BTreeSet<u64> = r.seeds.iter().copied().collect();
        seeds = seeds.intersection(&s).copied().collect();
    }
    seeds.into_iter().collect()
}

/// Seed-matched score matrix `rows[seed][condition]`.
fn paired(results: &[&ConditionResult]) -> Vec<Vec<f64>> {
    common_seeds(results)
        .into_iter()
        .map(|s| results.iter().map(|r| r.ari_for(s).expect("common seed")).collect())
        .collect()
}

fn find<'a>(results: &'a [ConditionResult], id: &str) -> Option<&'a ConditionResult> {
    results.iter().find(|r| r.condition == id)
}

fn entry(label: String, conditions: Vec<String>, t: TestResult) -> AnalysisEntry {
    AnalysisEntry {
        label,
        conditions,
        statistic: t.statistic,
        p_value: t.p_value,
        p_display: stats::display_p(t.p_value),
        n: t.n,
        method: t.method,
        reject: false,
    }
}

/// Friedman readings for one factor of the 2×2 grid: the two columns that
/// differ only in that factor, with the other factor's levels pooled as extra
/// rows, and the plain two-column test at the other factor's default level.
fn factor_entries(results: &[ConditionResult], factor: &str) -> Result<Vec<AnalysisEntry>> {
    let get = |id: &str| find(results, id).expect("2x2 grid present");
    let (pairs, simple) = match factor {
        "beta" => ([("11", "01"), ("10", "00")], ("11", "01")),
        _ => ([("11", "10"), ("01", "00")], ("11", "10")),
    };
    let mut pooled = Vec::new();
    for (hi, lo) in pairs {
        pooled.extend(paired(&[get(hi), get(lo)]));
    }
    let names = |a: &str, b: &str| vec![a.to_string(), b.to_string()];
    Ok(vec![
        entry(
            format!("{factor} (pooled rows)"),
            vec!["11".into(), "01".into(), "10".into(), "00".into()],
            friedman_test(&pooled)?,
        ),
        entry(
            format!("{factor} ({} vs {})", simple.0, simple.1),
            names(simple.0, simple.1),
            friedman_test(&paired(&[get(simple.0), get(simple.1)]))?,
        ),
    ])
}

/// Pairs compared by the Wilcoxon analysis: cyclic for three conditions,
/// all pairs otherwise.
fn comparison_pairs(n: usize) -> Vec<(usize, usize)> {
    if n == 3 {
        return vec![(0, 1), (1, 2), (2, 0)];
    }
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            out.push((i, j));
        }
    }
    out
}

pub fn analyze(results: &[ConditionResult], test: TestKind, correction: Correction, alpha: f64) -> Result<Analysis> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(LabError::config("alpha", "must lie in (0, 1)"));
    }
    if results.len() < 2 {
        return Err(LabError::config("runs", "at least 2 conditions are needed"));
    }
    let all: Vec<&ConditionResult> = results.iter().collect();
    if common_seeds(&all).len() < 2 {
        return Err(LabError::Degenerate("fewer than 2 seeds are shared by all conditions".into()));
    }
    let ids: Vec<String> = results.iter().map(|r| r.condition.clone()).collect();
    let mut entries = match test {
        TestKind::Friedman => {
            let mut e = vec![entry("all conditions".into(), ids.clone(), friedman_test(&paired(&all))?)];
            let grid = ["11", "01", "10", "00"];
            if grid.iter().all(|g| find(results, g).is_some()) {
                e.extend(factor_entries(results, "beta")?);
                e.extend(factor_entries(results, "gamma")?);
            }
            e
        }
        TestKind::Wilcoxon => {
            let mut e = Vec::new();
            for (i, j) in comparison_pairs(results.len()) {
                let rows = paired(&[&results[i], &results[j]]);
                let a: Vec<f64> = rows.iter().map(|r| r[0]).collect();
                let b: Vec<f64> = rows.iter().map(|r| r[1]).collect();
                e.push(entry(
                    format!("{} vs {}", ids[i], ids[j]),
                    vec![ids[i].clone(), ids[j].clone()],
                    wilcoxon_signed_rank(&a, &b)?,
                ));
            }
            e
        }
    };
    let pvals: Vec<f64> = entries.iter().map(|e| e.p_value).collect();
    for (e, d) in entries.iter_mut().zip(holm_bonferroni(&pvals, alpha, correction)) {
        e.reject = d;
    }
    Ok(Analysis {
        test,
        correction,
        alpha,
        entries,
    })
}
