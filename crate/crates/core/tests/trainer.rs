use std::path::Path;

use monet_lab::labrunner::{DatasetFlavor, ExperimentCondition};
use monet_lab::losses::{total_loss, LossConfig};
use monet_lab::model::{images_to_tensor, EpsMode, ModelConfig, Monet};
use monet_lab::synthgen::{write_dataset, DatasetHandle, SceneSpec, Split, SplitData};
use monet_lab::trainer::{
    self, load_params, read_meta, read_record, should_terminate, TerminationReason, TrainConfig, Trainer,
};
use monet_lab::LabError;

fn toy_data(dir: &Path, slots: usize) -> (DatasetHandle, SplitData, SplitData) {
    let spec = SceneSpec {
        image_size: 8,
        min_objects: 1,
        max_objects: slots - 1,
        scale_range: (0.3, 0.5),
        ..SceneSpec::default()
    };
    let h = write_dataset(&spec, 48, 8, 3, dir).unwrap();
    let train = h.load(Split::Train).unwrap();
    let eval = h.load(Split::Eval).unwrap();
    (h, train, eval)
}

fn mw_m() -> LossConfig {
    ExperimentCondition::preset("MW+M", DatasetFlavor::MultiDsprites).unwrap().loss
}

fn short(max_steps: u64, check_interval: u64) -> TrainConfig {
    TrainConfig {
        max_steps,
        check_interval,
        batch_size: 8,
        learning_rate: 1e-3,
        eval_batch_size: 8,
        ..TrainConfig::default()
    }
}

fn frozen_loss(model: &Monet, split: &SplitData, loss: &LossConfig) -> f64 {
    let x = images_to_tensor(&split.images[..4 * 8 * 8 * 3], 4, 8, 8, 3, model.dtype()).unwrap();
    let dec = model.forward(&x, EpsMode::Zero, 0).unwrap();
    total_loss(&x, &dec, loss).unwrap().breakdown.total
}

#[test]
fn zero_max_steps_gives_an_empty_series() {
    let dir = tempfile::tempdir().unwrap();
    let (h, train, eval) = toy_data(dir.path(), 3);
    let cfg = short(0, 1);
    let model = Monet::new(ModelConfig::toy(3), 1).unwrap();
    let r = trainer::train(model, &train, &eval, h.manifest_hash(), &mw_m(), &cfg, "MW+M", None).unwrap();
    assert!(r.series.is_empty());
    assert_eq!(r.reason, TerminationReason::MaxSteps);
    assert_eq!(r.termination_step, 0);
    assert_eq!(r.final_mse, r.initial.mse);
}

#[test]
fn fixed_seed_runs_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (h, train, eval) = toy_data(dir.path(), 3);
    let cfg = short(30, 10);
    let run = || {
        let model = Monet::new(ModelConfig::toy(3), cfg.seed).unwrap();
        trainer::train(model, &train, &eval, h.manifest_hash(), &mw_m(), &cfg, "MW+M", None).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn toy_mw_run_reduces_the_monitored_mse() {
    let dir = tempfile::tempdir().unwrap();
    let (h, train, eval) = toy_data(dir.path(), 2);
    let cfg = TrainConfig {
        early_stop: false,
        ..short(2_000, 500)
    };
    let model = Monet::new(ModelConfig::toy(2), 4).unwrap();
    let r = trainer::train(model, &train, &eval, h.manifest_hash(), &mw_m(), &cfg, "MW+M", None).unwrap();
    assert_eq!(r.termination_step, 2_000);
    assert!(r.final_mse < r.initial.mse, "final {} vs initial {}", r.final_mse, r.initial.mse);
}

#[test]
fn interrupted_run_resumes_to_the_same_record() {
    let dir = tempfile::tempdir().unwrap();
    let (h, train, eval) = toy_data(&dir.path().join("data"), 3);
    // A loose threshold so the run converges early and the stop step is
    // tested too.
    let cfg = TrainConfig {
        mse_threshold: 10.0,
        ratio_threshold: 1e-6,
        ..short(60, 10)
    };
    let loss = mw_m();
    let whole_dir = dir.path().join("whole");
    let model = Monet::new(ModelConfig::toy(3), cfg.seed).unwrap();
    let whole = trainer::train(model, &train, &eval, h.manifest_hash(), &loss, &cfg, "MW+M", Some(&whole_dir)).unwrap();
    assert_eq!(whole.reason, TerminationReason::Converged);

    let part_dir = dir.path().join("part");
    let model = Monet::new(ModelConfig::toy(3), cfg.seed).unwrap();
    let mut t = Trainer::new(model, &train, &eval, loss.clone(), cfg.clone(), h.manifest_hash(), "MW+M", Some(&part_dir)).unwrap();
    assert!(t.run(Some(15)).unwrap().is_none());
    assert_eq!(read_meta(&part_dir).unwrap().step, 15);

    let model = Monet::new(ModelConfig::toy(3), cfg.seed).unwrap();
    let mut t = Trainer::new(model, &train, &eval, loss.clone(), cfg.clone(), h.manifest_hash(), "MW+M", None).unwrap();
    t.restore(&part_dir).unwrap();
    assert_eq!(t.step(), 15);
    assert!(t.run(Some(16)).unwrap().is_none());
    assert_eq!(t.step(), 16);

    let part = trainer::resume(&part_dir, &ModelConfig::toy(3), &train, &eval, h.manifest_hash(), &loss, &cfg, "MW+M").unwrap();
    assert_eq!(part.termination_step, whole.termination_step);
    assert_eq!(
        serde_json::to_string(&part.series).unwrap(),
        serde_json::to_string(&whole.series).unwrap()
    );
    assert_eq!(read_record(&part_dir).unwrap().termination_step, whole.termination_step);
    assert_eq!(part.replay_termination(cfg.mse_threshold, cfg.ratio_threshold), Some(part.termination_step));
}

#[test]
fn resume_with_a_changed_loss_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let (h, train, eval) = toy_data(&dir.path().join("data"), 3);
    let cfg = short(20, 10);
    let run_dir = dir.path().join("run");
    let model = Monet::new(ModelConfig::toy(3), cfg.seed).unwrap();
    let mut t = Trainer::new(model, &train, &eval, mw_m(), cfg.clone(), h.manifest_hash(), "MW+M", Some(&run_dir)).unwrap();
    t.run(Some(10)).unwrap();
    let altered = LossConfig {
        gamma: 0.5,
        ..mw_m()
    };
    let err = trainer::resume(&run_dir, &ModelConfig::toy(3), &train, &eval, h.manifest_hash(), &altered, &cfg, "MW+M").unwrap_err();
    assert!(matches!(err, LabError::ConfigHashMismatch(_)), "{err}");
}

#[test]
fn checkpoint_round_trip_preserves_the_loss() {
    let dir = tempfile::tempdir().unwrap();
    let (h, train, eval) = toy_data(&dir.path().join("data"), 3);
    let cfg = short(20, 10);
    let loss = mw_m();
    let run_dir = dir.path().join("run");
    let model = Monet::new(ModelConfig::toy(3), cfg.seed).unwrap();
    let mut t = Trainer::new(model, &train, &eval, loss.clone(), cfg.clone(), h.manifest_hash(), "MW+M", Some(&run_dir)).unwrap();
    t.run(None).unwrap().unwrap();
    let trained = t.into_model();
    let fresh = Monet::new(ModelConfig::toy(3), 99).unwrap();
    let before = frozen_loss(&fresh, &train, &loss);
    load_params(&run_dir, &fresh).unwrap();
    let (want, got) = (frozen_loss(&trained, &train, &loss), frozen_loss(&fresh, &train, &loss));
    assert!((want - got).abs() < 1e-6, "{want} vs {got}");
    assert!((before - want).abs() > 1e-6);
}

#[test]
fn recorded_stops_replay_through_the_rule() {
    let dir = tempfile::tempdir().unwrap();
    let (h, train, eval) = toy_data(dir.path(), 3);
    for (l, ratio) in [(10.0, 1e-6), (1e-9, 0.99)] {
        let cfg = TrainConfig {
            mse_threshold: l,
            ratio_threshold: ratio,
            ..short(30, 10)
        };
        let model = Monet::new(ModelConfig::toy(3), 2).unwrap();
        let r = trainer::train(model, &train, &eval, h.manifest_hash(), &mw_m(), &cfg, "MW+M", None).unwrap();
        assert_eq!(r.replay_termination(l, ratio).unwrap_or(cfg.max_steps), r.termination_step);
        if r.reason == TerminationReason::Converged {
            let last = r.series.last().unwrap();
            assert!(last.mse < l);
            let prev = r.series.iter().rev().skip(1).find(|p| p.checked).map(|p| p.mse);
            assert!(should_terminate(last.mse, prev, l, ratio));
        }
    }
}
