use std::collections::BTreeSet;

use envrec_core::dataset::{generate_target, GeneratorConfig};
use envrec_core::evaluation::evaluate_model;
use envrec_core::model::{build_network, train};
use envrec_core::pipeline::{
    parse_report, render_report, run_maintain_ablation, run_mode_grid, run_strategy, DatasetRole,
    ReportFormat, Runner, StageConfig,
};
use envrec_core::taxonomy::ClassMergeMap;
use envrec_core::{ExperimentConfig, LossMode, Mode, SamplerMode, Strategy, TrainConfig};

fn fast() -> ExperimentConfig {
    let mut c = ExperimentConfig {
        seeds: vec![3],
        k: 3,
        ..ExperimentConfig::default()
    };
    let stage = StageConfig {
        epochs: 1,
        batch_size: 64,
        learning_rate: 0.01,
        momentum: 0.9,
    };
    c.stages.generic = Some(stage.clone());
    c.stages.auxiliary = Some(stage.clone());
    c.stages.target = Some(stage);
    c
}

#[test]
fn shipped_config_matches_defaults() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/default.toml");
    assert_eq!(
        ExperimentConfig::load(path).unwrap(),
        ExperimentConfig::default()
    );
    let map = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/merge_map.toml");
    assert_eq!(
        ClassMergeMap::load(map).unwrap(),
        ClassMergeMap::default_auxiliary()
    );
}

#[test]
fn strategies_touch_exactly_their_datasets() {
    use DatasetRole::*;
    let config = fast();
    let mut runner = Runner::new(&config).unwrap();
    let expected = [
        (Strategy::TargetOnly, vec![Target]),
        (Strategy::PretrainFineTune, vec![Generic, Target]),
        (Strategy::AuxiliaryOnly, vec![Generic, Auxiliary]),
        (Strategy::DropThenMaintain, vec![Generic, Auxiliary, Target]),
    ];
    for (strategy, used) in expected {
        let r = runner.run(strategy, Mode::DR, true).unwrap();
        assert_eq!(r.datasets_used, used, "strategy {strategy}");
    }
}

#[test]
fn strategy3_never_updates_on_target() {
    let mut config = fast();
    config.strategy = Strategy::AuxiliaryOnly;
    config.stages.target = None;
    let r = run_strategy(&config).unwrap();
    for t in &r.seeds[0].traces {
        assert_eq!(t.initial_digest, t.final_digest);
    }
    assert_eq!(
        r.seeds[0].traces[0].initial_digest,
        r.seeds[0].stage1_digest.clone().unwrap()
    );
}

#[test]
fn zero_epochs_evaluates_the_initial_network() {
    let mut config = fast();
    for s in [
        &mut config.stages.generic,
        &mut config.stages.auxiliary,
        &mut config.stages.target,
    ] {
        s.as_mut().unwrap().epochs = 0;
    }
    let r = run_strategy(&config).unwrap();
    assert!(r.datasets_used.is_empty());
    for t in &r.seeds[0].traces {
        assert_eq!(t.initial_digest, t.final_digest);
    }
    let report = &r.seeds[0].report;
    assert_eq!(report.confusion.total(), 89);
    // An untrained network collapses onto few classes; its SLA is bounded by
    // the share of the classes it predicts.
    let predicted: BTreeSet<usize> = (0..4)
        .filter(|&c| report.confusion.predicted(c) > 0)
        .collect();
    let share: u64 = predicted.iter().map(|&c| report.confusion.support(c)).sum();
    assert!(report.sla <= share as f64 / 89.0 + 1e-12);
}

#[test]
fn maintain_ablation_shares_early_stages() {
    let config = fast();
    let (with, without) = run_maintain_ablation(&config).unwrap();
    let (a, b) = (&with.seeds[0], &without.seeds[0]);
    assert_eq!(a.stage0_digest, b.stage0_digest);
    assert_eq!(a.stage1_digest, b.stage1_digest);
    assert_eq!(a.partition_digest, b.partition_digest);
    let stage1_g = a.stage1_classifier_digest.clone().unwrap();
    for t in &a.traces {
        assert_eq!(t.initial_classifier_digest, stage1_g);
        assert_eq!(Some(&t.initial_digest), a.stage1_digest.as_ref());
    }
    for t in &b.traces {
        assert_ne!(t.initial_classifier_digest, stage1_g);
    }
}

#[test]
fn mode_grid_rows_share_partitions_and_render() {
    let config = fast();
    let grid = run_mode_grid(&config).unwrap();
    assert_eq!(grid.len(), 6);
    let digests: BTreeSet<&str> = grid
        .iter()
        .map(|r| r.seeds[0].partition_digest.as_str())
        .collect();
    assert_eq!(digests.len(), 1);
    let labels: Vec<String> = grid.iter().map(|r| r.label()).collect();
    assert_eq!(
        labels,
        [
            "Baseline 0 (DR)",
            "Baseline 1 (WL)",
            "Baseline 2 (RS)",
            "Ours",
            "Ours (WL)",
            "Ours (RS)"
        ]
    );

    let md = render_report(&grid, ReportFormat::Markdown).unwrap();
    assert_eq!(md.lines().count(), 2 + grid.len());
    assert!(md
        .lines()
        .next()
        .unwrap()
        .starts_with("| Method | SLA | Macro P | Macro R | Macro F1 |"));

    let csv = render_report(&grid, ReportFormat::Csv).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "strategy,mode,seed,fold,sla,macro_p,macro_r,macro_f1,acc_Vehicle,acc_Home,acc_Restaurant,acc_Workplace"
    );
    assert_eq!(lines.count(), grid.len() * config.k);

    let text = render_report(&grid, ReportFormat::StructuredText).unwrap();
    let parsed = parse_report(&text).unwrap();
    assert_eq!(parsed, grid);
    assert!(render_report(&[], ReportFormat::Csv).is_err());
    assert!("xml".parse::<ReportFormat>().is_err());
}

#[test]
fn runs_are_reproducible() {
    let mut config = fast();
    config.mode = Mode::RS;
    let a = run_strategy(&config).unwrap();
    let b = run_strategy(&config).unwrap();
    let csv = |r| render_report(&[r], ReportFormat::Csv).unwrap();
    assert_eq!(csv(a.clone()), csv(b.clone()));
    assert_eq!(a.seeds, b.seeds);
}

#[test]
fn per_fold_early_stages_are_supported() {
    let mut config = fast();
    config.share_early_stages = false;
    let r = run_strategy(&config).unwrap();
    let stage1: BTreeSet<&str> = r.seeds[0]
        .traces
        .iter()
        .map(|t| t.initial_digest.as_str())
        .collect();
    assert_eq!(stage1.len(), config.k);
}

#[test]
fn config_errors_surface() {
    let mut config = fast();
    config.stages.auxiliary = None;
    assert!(run_strategy(&config).is_err());
    config.strategy = Strategy::PretrainFineTune;
    assert!(run_strategy(&config).is_ok());

    let mut config = fast();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("map.toml");
    let mut map = ClassMergeMap::default_auxiliary().to_toml().unwrap();
    map = map.replacen(
        "targets = [\"Vehicle\", \"Home\", \"Restaurant\", \"Workplace\"]",
        "targets = [\"Home\", \"Vehicle\", \"Restaurant\", \"Workplace\"]",
        1,
    );
    std::fs::write(&path, map).unwrap();
    config.merge_map = Some(path);
    assert!(matches!(
        run_strategy(&config),
        Err(envrec_core::Error::ClassMismatch { .. })
    ));
}

#[test]
fn every_parameter_updates_in_every_stage() {
    let target = generate_target(&GeneratorConfig::target_default(), 1).unwrap();
    let net = build_network(&fast().arch, target.classes(), 2).unwrap();
    for (loss, sampler) in [
        (LossMode::Plain, SamplerMode::SequentialShuffle),
        (LossMode::Weighted, SamplerMode::SequentialShuffle),
        (LossMode::Plain, SamplerMode::ClassBalanced),
    ] {
        let c = TrainConfig {
            epochs: 1,
            batch_size: 64,
            learning_rate: 0.01,
            momentum: 0.9,
            loss,
            sampler,
            seed: 4,
        };
        let (trained, _) = train(net.clone(), &target.frame_view(), &c).unwrap();
        for ((name, a), (_, b)) in net.parameters().iter().zip(trained.parameters()) {
            assert!(
                a.data().iter().zip(b.data()).any(|(x, y)| x != y),
                "{name} frozen"
            );
        }
        let r1 = evaluate_model(&trained, &target).unwrap();
        assert_eq!(r1, evaluate_model(&trained, &target).unwrap());
    }
}

#[test]
fn explicit_fold_file_replaces_seeded_partitioning() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("folds.toml");
    let mut config = fast();
    config.k = 2;
    // Every other sequence id, so both Vehicle sequences (ids 0 and 1) are split.
    let folds = vec![(0..89).step_by(2).collect(), (1..89).step_by(2).collect()];
    envrec_core::FoldPartition { k: 2, folds }
        .save(&path)
        .unwrap();
    config.fold_file = Some(path);
    let mut runner = Runner::new(&config).unwrap();
    assert_eq!(
        runner.partition(config.seeds[0]).unwrap().folds[0][..3],
        [0, 2, 4]
    );
    runner.run(Strategy::TargetOnly, Mode::DR, true).unwrap();

    config.k = 3;
    assert!(Runner::new(&config).is_err());
}
