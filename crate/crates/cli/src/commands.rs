use std::fs;
use std::path::{Path, PathBuf};

use monet_lab::labrunner::{
    self, analyze as run_analysis, load_experiment, load_results, summarize, winner_take_all_probe, Correction,
    DatasetFlavor, ExperimentCondition, ExperimentConfig, Preset, ProbeConfig, ProbeLoss, TestKind, REFERENCE_DIR,
};
use monet_lab::losses::LossConfig;
use monet_lab::model::{ModelConfig, Monet};
use monet_lab::synthgen::{write_dataset, DatasetHandle, SceneSpec, Split};
use monet_lab::trainer::{self, evaluate, TrainConfig, META_FILE, RECORD_FILE};
use monet_lab::LabError;
use serde::{Deserialize, Serialize};

use crate::config::{apply_sets, load_file_over, write_invocation, CliError, CliResult};
use crate::{
    AnalyzeArgs, CorrectionArg, EvalArgs, ExperimentArgs, FlavorArg, GenDataArgs, PresetArg, ProbeArgs, ProbeLossArg,
    TestArg, TrainArgs,
};

pub const RUN_CONFIG_FILE: &str = "config.json";

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| LabError::io(path, e))?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| LabError::io(path, e))?;
    Ok(())
}

pub fn gen_data(a: &GenDataArgs) -> CliResult<()> {
    let mut spec = load_file_over(&SceneSpec::default(), a.config.as_deref())?;
    if let Some(v) = a.image_size {
        spec.image_size = v;
    }
    if let Some(v) = a.min_objects {
        spec.min_objects = v;
    }
    if let Some(v) = a.max_objects {
        spec.max_objects = v;
    }
    let spec = apply_sets(&spec, &a.sets)?;
    let handle = write_dataset(&spec, a.count, a.eval_count, a.seed, &a.out)?;
    write_invocation(
        &a.out,
        "gen-data",
        &serde_json::json!({ "spec": spec, "count": a.count, "eval_count": a.eval_count, "seed": a.seed }),
    )?;
    println!("{}", serde_json::json!({ "out": a.out, "manifest_hash": handle.manifest_hash(), "counts": handle.manifest.counts }));
    Ok(())
}

fn flavor(f: FlavorArg) -> DatasetFlavor {
    match f {
        FlavorArg::MultiDsprites => DatasetFlavor::MultiDsprites,
        FlavorArg::ObjectsRoom => DatasetFlavor::ObjectsRoom,
    }
}

/// Everything one `train` run depends on; saved as `config.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub condition: String,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
}

pub fn read_run_config(dir: &Path) -> CliResult<RunConfig> {
    let path = dir.join(RUN_CONFIG_FILE);
    let text = fs::read_to_string(&path).map_err(|e| LabError::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn train(a: &TrainArgs) -> CliResult<()> {
    let fl = flavor(a.flavor);
    let defaults = RunConfig {
        dataset: a.data.clone(),
        condition: "custom".into(),
        model: if a.toy { ModelConfig::toy(3) } else { ModelConfig::default() },
        loss: LossConfig::monet_original(),
        train: TrainConfig {
            mse_threshold: fl.mse_threshold(),
            ..TrainConfig::default()
        },
    };
    let mut cfg = load_file_over(&defaults, a.config.as_deref())?;
    cfg.dataset = a.data.clone();
    if let Some(id) = &a.condition {
        cfg.loss = ExperimentCondition::preset(id, fl)?.loss;
        cfg.condition = id.clone();
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    let cfg = apply_sets(&cfg, &a.sets)?;
    cfg.model.validate()?;
    cfg.loss.validate()?;
    cfg.train.validate()?;

    let handle = DatasetHandle::open(&cfg.dataset)?;
    handle.manifest.spec.validate_for_slots(cfg.model.slots)?;
    let train_split = handle.load(Split::Train)?;
    let eval_split = handle.load(Split::Eval)?;
    if eval_split.len == 0 {
        return Err(CliError::Lab(LabError::config("eval_count", "the dataset has no eval split")));
    }
    let out = &a.out;
    if out.join(RECORD_FILE).exists() {
        return Err(CliError::usage(format!("{} already holds a finished run", out.display())));
    }
    let record = if a.resume {
        if !out.join(META_FILE).exists() {
            return Err(CliError::usage(format!("no checkpoint to resume in {}", out.display())));
        }
        trainer::resume(out, &cfg.model, &train_split, &eval_split, handle.manifest_hash(), &cfg.loss, &cfg.train, &cfg.condition)?
    } else {
        if out.join(META_FILE).exists() {
            return Err(CliError::usage(format!("{} holds a checkpoint; pass --resume to continue it", out.display())));
        }
        fs::create_dir_all(out).map_err(|e| LabError::io(out, e))?;
        write_json(&out.join(RUN_CONFIG_FILE), &cfg)?;
        let model = Monet::new(cfg.model.clone(), cfg.train.seed)?;
        trainer::train(model, &train_split, &eval_split, handle.manifest_hash(), &cfg.loss, &cfg.train, &cfg.condition, Some(out))?
    };
    write_invocation(out, "train", &serde_json::to_value(&cfg)?)?;
    println!(
        "{}",
        serde_json::json!({
            "condition": record.condition,
            "seed": record.seed,
            "termination_step": record.termination_step,
            "reason": record.reason,
            "final_ari": record.final_ari,
            "final_mse": record.final_mse,
            "final_binarization": record.final_binarization,
        })
    );
    Ok(())
}

pub fn eval(a: &EvalArgs) -> CliResult<()> {
    let cfg = read_run_config(&a.run)?;
    let data = a.data.clone().unwrap_or_else(|| cfg.dataset.clone());
    let handle = DatasetHandle::open(&data)?;
    let eval_split = handle.load(Split::Eval)?;
    let model = Monet::new(cfg.model.clone(), cfg.train.seed)?;
    trainer::load_params(&a.run, &model)?;
    let s = evaluate(&model, &eval_split, &cfg.loss, a.limit.or(cfg.train.eval_limit), cfg.train.eval_batch_size)?;
    let out = a.out.clone().unwrap_or_else(|| a.run.join("eval"));
    let summary = serde_json::json!({
        "dataset": data,
        "checkpoint_step": trainer::read_meta(&a.run)?.step,
        "losses": s.losses,
        "ari_mean": s.ari_mean,
        "ari_median": s.ari_median,
        "binarization": s.binarization,
        "scored_images": s.per_image_ari.len(),
    });
    write_invocation(&out, "eval", &serde_json::json!({ "run": a.run, "dataset": data, "limit": a.limit }))?;
    write_json(&out.join("eval.json"), &summary)?;
    println!("{summary}");
    Ok(())
}

/// `1..5` (inclusive), `1,2,7` or `3`.
pub fn parse_seeds(s: &str) -> CliResult<Vec<u64>> {
    let bad = || CliError::usage(format!("cannot read seed list `{s}`"));
    if let Some((lo, hi)) = s.split_once("..") {
        let lo: u64 = lo.trim().parse().map_err(|_| bad())?;
        let hi: u64 = hi.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
        if hi < lo {
            return Err(bad());
        }
        return Ok((lo..=hi).collect());
    }
    s.split(',').map(|p| p.trim().parse().map_err(|_| bad())).collect()
}

fn preset(p: PresetArg) -> Preset {
    match p {
        PresetArg::Ablation2x2 => Preset::Ablation2x2,
        PresetArg::LossReplacement => Preset::LossReplacement,
        PresetArg::MwComparison => Preset::MwComparison,
    }
}

pub fn experiment(a: &ExperimentArgs) -> CliResult<()> {
    let mut cfg = load_file_over(&ExperimentConfig::new(""), a.config.as_deref())?;
    if let Some(d) = &a.data {
        cfg.dataset = d.clone();
    }
    if let Some(p) = a.preset {
        cfg.preset = Some(preset(p));
    }
    if let Some(s) = &a.seeds {
        cfg.seeds = parse_seeds(s)?;
    }
    if let Some(w) = a.workers {
        cfg.parallelism = w;
    }
    let cfg = apply_sets(&cfg, &a.sets)?;
    if cfg.dataset.as_os_str().is_empty() {
        return Err(CliError::usage("no dataset: pass --data or set `dataset` in the config"));
    }
    cfg.validate()?;
    write_invocation(&a.out, "experiment", &serde_json::to_value(&cfg)?)?;
    let output = labrunner::run_experiment(&cfg, &a.out)?;
    let report = summarize(&output.results, output.reference.as_deref())?;
    write_json(&a.out.join("report.json"), &report)?;
    let text = report.render();
    write_text(&a.out.join("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

pub fn analyze(a: &AnalyzeArgs) -> CliResult<()> {
    let results = load_experiment(&a.runs)?;
    let test = match a.test {
        TestArg::Friedman => TestKind::Friedman,
        TestArg::Wilcoxon => TestKind::Wilcoxon,
    };
    let correction = match a.correction {
        CorrectionArg::Holm => Correction::Holm,
        CorrectionArg::Fixed => Correction::FixedDivide,
    };
    let analysis = run_analysis(&results, test, correction, a.alpha)?;
    let reference_dir = a.runs.join(REFERENCE_DIR);
    let reference = if reference_dir.is_dir() { Some(load_results(&reference_dir, None)?) } else { None };
    let report = summarize(&results, reference.as_deref())?;
    let out = a.out.clone().unwrap_or_else(|| a.runs.join("analysis"));
    write_invocation(
        &out,
        "analyze",
        &serde_json::json!({ "runs": a.runs, "test": test, "correction": correction, "alpha": a.alpha }),
    )?;
    write_json(&out.join("analysis.json"), &serde_json::json!({ "summary": report, "analysis": analysis }))?;
    let text = format!("{}\n{}", report.render(), analysis.render());
    write_text(&out.join("analysis.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn parse_list(s: &str, what: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Lab(LabError::config(what, format!("`{p}` is not a number"))))
        })
        .collect()
}

pub fn probe(a: &ProbeArgs) -> CliResult<()> {
    let errors = parse_list(&a.errors, "errors")?;
    if a.k < 2 {
        return Err(CliError::Lab(LabError::config("k", "need at least 2 slots")));
    }
    if errors.is_empty() || errors.len() % a.k != 0 {
        return Err(CliError::Lab(LabError::config(
            "errors",
            format!("{} values is not a whole number of pixels for K = {}", errors.len(), a.k),
        )));
    }
    let loss = match a.loss {
        ProbeLossArg::Nll => ProbeLoss::Nll,
        ProbeLossArg::Mw => ProbeLoss::Mw,
        ProbeLossArg::Ir => ProbeLoss::Ir,
    };
    let mut cfg = ProbeConfig::new(loss, errors.chunks(a.k).map(<[f64]>::to_vec).collect());
    if let Some(s) = &a.sigma {
        cfg.sigma = parse_list(s, "sigma")?;
        if cfg.sigma.len() == 1 && loss == ProbeLoss::Nll {
            cfg.sigma = vec![cfg.sigma[0]; a.k];
        }
    }
    cfg.steps = a.steps;
    cfg.step_size = a.lr;
    let r = winner_take_all_probe(&cfg)?;
    let summary = serde_json::json!({
        "loss": r.loss,
        "k": r.k,
        "final_masks": r.final_masks,
        "final_binarization": r.final_binarization(),
        "winners": r.winners,
        "optimal": r.optimal,
        "tie_pixels": r.tie_pixels,
        "final_loss": r.final_loss,
        "analytic_minimum": r.analytic_minimum,
    });
    if let Some(out) = &a.out {
        write_invocation(out, "probe-wta", &serde_json::to_value(&cfg)?)?;
        write_json(&out.join("trajectory.json"), &serde_json::json!({ "binarization": r.binarization }))?;
        write_json(&out.join("summary.json"), &summary)?;
    }
    println!("{summary}");
    Ok(())
}
