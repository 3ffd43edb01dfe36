use std::fs;
use std::path::Path;
use std::time::SystemTime;

use monet_lab::labrunner::{
    analyze, load_experiment, run_dir, run_experiment, summarize, ConditionSpec, Correction, ExperimentConfig, TestKind,
    RUNS_DIR,
};
use monet_lab::model::ModelConfig;
use monet_lab::synthgen::{write_dataset, SceneSpec};
use monet_lab::trainer::{TrainConfig, RECORD_FILE};
use monet_lab::LabError;

fn setup(dir: &Path) -> ExperimentConfig {
    let spec = SceneSpec {
        image_size: 8,
        scale_range: (0.3, 0.5),
        ..SceneSpec::default()
    };
    write_dataset(&spec, 40, 8, 5, &dir.join("data")).unwrap();
    let mut cfg = ExperimentConfig::new(dir.join("data"));
    cfg.model = ModelConfig::toy(3);
    cfg.train = TrainConfig {
        max_steps: 6,
        check_interval: 3,
        batch_size: 4,
        eval_batch_size: 8,
        ..TrainConfig::default()
    };
    cfg.conditions = ["MSE+M", "MW+M"]
        .into_iter()
        .map(|id| ConditionSpec {
            id: id.into(),
            loss: None,
            train: None,
        })
        .collect();
    cfg.seeds = vec![1, 2, 3];
    cfg
}

fn mtimes(root: &Path) -> Vec<SystemTime> {
    let mut out = Vec::new();
    for c in ["MSE+M", "MW+M"] {
        for s in 1..=3 {
            out.push(fs::metadata(run_dir(root, c, s).join(RECORD_FILE)).unwrap().modified().unwrap());
        }
    }
    out
}

#[test]
fn two_conditions_by_three_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let out = dir.path().join("exp");
    let first = run_experiment(&cfg, &out).unwrap();
    assert_eq!(first.results.len(), 2);
    assert!(first.reference.is_none());
    for r in &first.results {
        assert_eq!(r.seeds, vec![1, 2, 3]);
        assert!(r.failures.is_empty());
        assert!(r.q1 <= r.median && r.median <= r.q3);
    }
    let root = out.join(RUNS_DIR);
    let before = mtimes(&root);

    let again = run_experiment(&cfg, &out).unwrap();
    assert_eq!(mtimes(&root), before, "finished pairs are not retrained");
    assert_eq!(
        serde_json::to_string(&again.results).unwrap(),
        serde_json::to_string(&first.results).unwrap()
    );
    let loaded = load_experiment(&out).unwrap();
    assert_eq!(
        serde_json::to_string(&loaded).unwrap(),
        serde_json::to_string(&first.results).unwrap()
    );

    // The seed-paired ordering: conditions share seeds, so records for the
    // same seed start from the same initial parameters.
    let a: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run_dir(&root, "MSE+M", 2).join(RECORD_FILE)).unwrap()).unwrap();
    let b: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run_dir(&root, "MW+M", 2).join(RECORD_FILE)).unwrap()).unwrap();
    assert_eq!(a["initial"]["ari"], b["initial"]["ari"]);

    let report = summarize(&first.results, None).unwrap();
    assert_eq!(report.conditions.len(), 2);
    assert!(report.render().contains("MW+M"));

    let f = analyze(&first.results, TestKind::Friedman, Correction::Holm, 0.05).unwrap();
    assert!(!f.entries.is_empty());
    let w = analyze(&first.results, TestKind::Wilcoxon, Correction::Holm, 0.05);
    assert!(matches!(w, Err(LabError::Degenerate(_))), "three seeds are below the Wilcoxon minimum");
}

#[test]
fn extra_seeds_only_add_runs_and_reference_runs_are_kept_apart() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = setup(dir.path());
    cfg.seeds = vec![1, 2];
    let out = dir.path().join("exp");
    run_experiment(&cfg, &out).unwrap();
    let seed1 = fs::metadata(run_dir(&out.join(RUNS_DIR), "MW+M", 1).join(RECORD_FILE)).unwrap().modified().unwrap();

    cfg.seeds = vec![1, 2, 3];
    cfg.reference_factor = Some(2);
    let res = run_experiment(&cfg, &out).unwrap();
    let again = fs::metadata(run_dir(&out.join(RUNS_DIR), "MW+M", 1).join(RECORD_FILE)).unwrap().modified().unwrap();
    assert_eq!(seed1, again);
    assert_eq!(res.results[1].seeds, vec![1, 2, 3]);
    let reference = res.reference.expect("reference runs requested");
    assert_eq!(reference.len(), 2);
    let rec: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(run_dir(&out.join("reference"), "MW+M", 3).join(RECORD_FILE)).unwrap(),
    )
    .unwrap();
    assert_eq!(rec["termination_step"], 12);
    let report = summarize(&res.results, Some(&reference)).unwrap();
    assert_eq!(report.differences.unwrap().len(), 2);
}

#[test]
fn bad_condition_ids_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = setup(dir.path());
    cfg.conditions.push(ConditionSpec {
        id: "XYZ".into(),
        loss: None,
        train: None,
    });
    let err = run_experiment(&cfg, &dir.path().join("exp")).unwrap_err();
    assert!(matches!(err, LabError::Config { .. }), "{err}");
}
