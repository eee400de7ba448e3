mod common;

use common::{small_teachers, synth_with};
use shazam_core::feature_store::{PlantedMode, ScaleMode, ScaleLevel, TaskKind};
use shazam_core::tasks::*;
use shazam_core::{Error, FeatureSet};

fn small_arch() -> ArchOptions {
    ArchOptions { d: 8, heads: 2, layers: 1, head_hidden: Some(vec![8]), mil_hidden: 8, ..Default::default() }
}

fn quick(mut cfg: TrainConfig, epochs: usize) -> TrainConfig {
    cfg.epochs = epochs;
    cfg.batch_size = 16;
    cfg
}

fn tile_set() -> FeatureSet {
    synth_with(small_teachers(), TaskKind::Tile, 60, PlantedMode::TeacherZeroOnly, ScaleMode::Shared, 0, 4)
}

fn fit(fs: &FeatureSet, arch: &ArchOptions, cfg: &TrainConfig) -> (ShazamModel, TrainReport, Vec<Unit>) {
    let units = build_units(fs, None).unwrap();
    let mut model = ShazamModel::new(fusion_model_config(fs, arch, cfg.seed).unwrap()).unwrap();
    let idx: Vec<usize> = (0..units.len()).collect();
    let report = train(&mut model, fs, &units, &idx, cfg).unwrap();
    (model, report, units)
}

#[test]
fn same_seed_gives_identical_checkpoints_and_logs() {
    let fs = tile_set();
    let cfg = quick(TrainConfig::tile(), 3);
    let dir = tempfile::tempdir().unwrap();
    let mut logs = Vec::new();
    for run in ["a", "b"] {
        let (model, report, _) = fit(&fs, &small_arch(), &cfg);
        save_checkpoint(&model, &dir.path().join(run)).unwrap();
        logs.push(report.log_csv());
    }
    assert_eq!(logs[0], logs[1]);
    for f in ["model.manifest", "model.params"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}

#[test]
fn training_reduces_loss_on_planted_data() {
    let fs = synth_with(small_teachers(), TaskKind::Expression, 80, PlantedMode::TeacherZeroOnly, ScaleMode::Shared, 0, 2);
    let fs = prepare_expression(&fs).unwrap();
    let mut cfg = quick(TrainConfig::st(), 15);
    cfg.validation_fraction = 0.0;
    let (_, report, _) = fit(&fs, &small_arch(), &cfg);
    let first = report.epochs.first().unwrap().task_loss;
    let last = report.epochs.last().unwrap().task_loss;
    assert!(last < 0.8 * first, "{first} -> {last}");
}

#[test]
fn lambda_does_not_change_first_task_loss() {
    let fs = tile_set();
    let mut a = quick(TrainConfig::tile(), 1);
    a.lambda_distill = 0.0;
    let b = quick(TrainConfig::tile(), 1);
    let (_, ra, _) = fit(&fs, &small_arch(), &a);
    let (_, rb, _) = fit(&fs, &small_arch(), &b);
    assert_eq!(ra.steps[0].task_loss, rb.steps[0].task_loss);
    assert_eq!(ra.steps[0].total, ra.steps[0].task_loss);
    assert!(rb.steps[0].total > rb.steps[0].task_loss);
}

#[test]
fn non_finite_parameters_abort_training() {
    let fs = tile_set();
    let cfg = quick(TrainConfig::tile(), 2);
    let units = build_units(&fs, None).unwrap();
    let mut model = ShazamModel::new(fusion_model_config(&fs, &small_arch(), 0).unwrap()).unwrap();
    let id = model.store.find("head.1.bias").unwrap();
    model.store.get_mut(id).data[0] = f64::NAN;
    let idx: Vec<usize> = (0..units.len()).collect();
    let err = train(&mut model, &fs, &units, &idx, &cfg).unwrap_err();
    assert!(matches!(err, Error::TrainingAborted { step: 0, .. }), "{err}");
    assert!(err.is_numeric());
}

#[test]
fn task_mismatch_is_rejected() {
    let tile = tile_set();
    let st = synth_with(small_teachers(), TaskKind::Expression, 20, PlantedMode::TeacherZeroOnly, ScaleMode::Shared, 0, 1);
    let units = build_units(&st, None).unwrap();
    let mut model = ShazamModel::new(fusion_model_config(&tile, &small_arch(), 0).unwrap()).unwrap();
    let idx: Vec<usize> = (0..units.len()).collect();
    assert!(matches!(train(&mut model, &st, &units, &idx, &quick(TrainConfig::tile(), 1)), Err(Error::InvalidArgument(_))));
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let fs = synth_with(small_teachers(), TaskKind::Survival, 24, PlantedMode::TeacherZeroOnly, ScaleMode::Shared, 3, 5);
    let (model, _, units) = fit(&fs, &small_arch(), &quick(TrainConfig::survival(), 2));
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(&model, dir.path()).unwrap();
    let back = load_checkpoint(dir.path()).unwrap();
    assert_eq!(back.cfg, model.cfg);
    let idx: Vec<usize> = (0..units.len()).collect();
    assert_eq!(predict(&model, &fs, &units, &idx).unwrap(), predict(&back, &fs, &units, &idx).unwrap());
}

#[test]
fn disabled_gating_emits_uniform_gates() {
    let fs = tile_set();
    let arch = ArchOptions { moe: false, ..small_arch() };
    let (model, _, units) = fit(&fs, &arch, &quick(TrainConfig::tile(), 1));
    let p = predict(&model, &fs, &units, &[0, 1, 2]).unwrap();
    for unit in &p.gates {
        assert_eq!(unit.len(), 3);
        for (_, g) in unit {
            assert!(g.iter().all(|&x| x == 1.0 / 3.0));
        }
    }
}

#[test]
fn single_scale_distillation_averages_teacher_terms() {
    let fs = tile_set();
    let arch = ArchOptions { scales: vec![ScaleLevel::Low], ..small_arch() };
    let (_, report, _) = fit(&fs, &arch, &quick(TrainConfig::tile(), 1));
    let step = &report.steps[0];
    assert_eq!(step.distill_terms.len(), 3);
    assert!(step.distill_terms.iter().all(|t| t.scale == ScaleLevel::Low));
    let mean = step.distill_terms.iter().map(|t| t.value).sum::<f64>() / 3.0;
    assert!((mean - step.distill_total).abs() < 1e-12);
}

#[test]
fn presets() {
    let tile = TrainConfig::preset("tile").unwrap();
    assert_eq!((tile.epochs, tile.batch_size), (50, 128));
    assert_eq!(tile.lambda_distill, 0.01);
    assert_eq!(TrainConfig::default_for(TaskKind::Tile), tile);
    let st = TrainConfig::preset("st").unwrap();
    assert!(matches!(st.schedule, Schedule::Plateau { factor, patience: 5 } if factor == 0.5));
    let surv = TrainConfig::preset("survival").unwrap();
    assert_eq!((surv.learning_rate, surv.weight_decay), (2e-4, 1e-3));
    assert!(TrainConfig::preset("nope").is_err());
}

#[test]
fn default_tile_preset_logs_fifty_epochs() {
    let fs = synth_with(small_teachers(), TaskKind::Tile, 20, PlantedMode::TeacherZeroOnly, ScaleMode::Shared, 0, 6);
    let cfg = TrainConfig::tile();
    let arch = ArchOptions { d: 4, heads: 1, layers: 1, head_hidden: Some(vec![]), ..Default::default() };
    let (_, report, _) = fit(&fs, &arch, &cfg);
    assert_eq!(report.epochs.len(), 50);
    // 20 units fit in one batch of 128
    assert_eq!(report.steps.len(), 50);
}

#[test]
fn cross_validation_is_seeded_and_shares_splits() {
    let fs = tile_set();
    let arch = small_arch();
    let cfg = quick(TrainConfig::tile(), 2);
    let build = |s: u64| fusion_model_config(&fs, &arch, s);
    let a = cross_validate(&fs, &build, &cfg, 3, 9).unwrap();
    let b = cross_validate(&fs, &build, &cfg, 3, 9).unwrap();
    assert_eq!(a.folds.len(), 3);
    assert_eq!(a.splits_hash, b.splits_hash);
    assert_eq!(a.mean_primary(), b.mean_primary());
    let other = ArchOptions { moe: false, ..small_arch() };
    let c = cross_validate(&fs, &|s| fusion_model_config(&fs, &other, s), &cfg, 3, 9).unwrap();
    assert_eq!(a.splits_hash, c.splits_hash);
    let mut tested: Vec<usize> = a.folds.iter().flat_map(|f| f.test.clone()).collect();
    tested.sort_unstable();
    assert_eq!(tested, (0..a.units.len()).collect::<Vec<_>>());
}
