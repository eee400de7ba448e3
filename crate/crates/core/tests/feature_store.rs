mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;
use shazam_core::feature_store::{
    default_teachers, extraction_depths, manifest_path, patient_split, read_feature_set, synth_teacher_set,
    write_feature_set, FeatureSet, PlantedMode, ScaleLevel, ScaleMode, SynthConfig, TaskKind, TaskLabel, UNASSIGNED,
};
use shazam_core::Error;

#[test]
fn generator_is_deterministic() {
    let cfg = SynthConfig::new(default_teachers(), 200, TaskKind::Tile);
    let a = synth_teacher_set(&cfg, 7).unwrap();
    let b = synth_teacher_set(&cfg, 7).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.feature_hash(), b.feature_hash());
    let c = synth_teacher_set(&cfg, 8).unwrap();
    assert_ne!(a.feature_hash(), c.feature_hash());
}

#[test]
fn vectors_follow_native_dims() {
    let fs = common::synth(TaskKind::Expression, 30, 2);
    let dims: Vec<usize> = fs.teachers.iter().map(|t| t.native_dim).collect();
    assert_eq!(dims, vec![32, 48, 16, 24, 40]);
    for s in &fs.samples {
        for (f, d) in s.features.iter().zip(&dims) {
            for scale in ScaleLevel::ALL {
                assert_eq!(f.get(scale).len(), *d);
            }
        }
    }
}

/// Held-out accuracy of a closed-form ridge probe on one teacher's high features.
fn probe_accuracy(fs: &FeatureSet, teacher: usize) -> f64 {
    let n = fs.len();
    let n_train = n * 2 / 3;
    let dim = fs.teachers[teacher].native_dim;
    let k = fs.manifest.num_classes;
    let x = |i: usize| -> Vec<f64> {
        let mut v: Vec<f64> = fs.samples[i].features[teacher].get(ScaleLevel::High).iter().map(|&x| f64::from(x)).collect();
        v.push(1.0);
        v
    };
    let label = |i: usize| match fs.samples[i].label {
        TaskLabel::Class(c) => c as usize,
        _ => unreachable!(),
    };
    let xt = DMatrix::from_fn(n_train, dim + 1, |r, c| x(r)[c]);
    let yt = DMatrix::from_fn(n_train, k, |r, c| if label(r) == c { 1.0 } else { 0.0 });
    let gram = xt.transpose() * &xt + DMatrix::identity(dim + 1, dim + 1) * 1.0;
    let w = gram.try_inverse().unwrap() * xt.transpose() * yt;
    let correct = (n_train..n)
        .filter(|&i| {
            let row = DMatrix::from_row_slice(1, dim + 1, &x(i));
            let scores = row * &w;
            let best = (0..k).max_by(|&a, &b| scores[(0, a)].total_cmp(&scores[(0, b)])).unwrap();
            best == label(i)
        })
        .count();
    correct as f64 / (n - n_train) as f64
}

#[test]
fn planted_teacher_zero_beats_noise_teacher_under_a_linear_probe() {
    for seed in [1, 2, 3] {
        let mut cfg = SynthConfig::new(default_teachers(), 600, TaskKind::Tile);
        cfg.planted = PlantedMode::TeacherZeroOnly;
        let fs = synth_teacher_set(&cfg, seed).unwrap();
        let signal = probe_accuracy(&fs, 0);
        let noise = probe_accuracy(&fs, 3);
        assert!(signal > noise + 0.1, "seed {seed}: teacher 0 {signal:.3} vs teacher 3 {noise:.3}");
    }
}

#[test]
fn depth_table() {
    assert_eq!(extraction_depths(24).unwrap(), (7, 15, 24));
    assert_eq!(extraction_depths(1).unwrap(), (1, 1, 1));
    assert_eq!(extraction_depths(40).unwrap(), (13, 26, 40));
    assert!(matches!(extraction_depths(0), Err(Error::InvalidArgument(_))));
    assert!(extraction_depths(-3).is_err());
}

#[test]
fn manifest_count_mismatch_is_inconsistent() {
    let fs = common::synth(TaskKind::Tile, 9, 4);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("set.shzf");
    write_feature_set(&fs, &path).unwrap();
    let mpath = manifest_path(&path);
    let text = std::fs::read_to_string(&mpath).unwrap();
    assert!(text.contains("n_samples=9"));
    std::fs::write(&mpath, text.replace("n_samples=9", "n_samples=10")).unwrap();
    assert!(matches!(read_feature_set(&path), Err(Error::InconsistentContainer(_))));
}

#[test]
fn trailing_bytes_are_corrupt() {
    let fs = common::synth(TaskKind::Tile, 3, 4);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("set.shzf");
    write_feature_set(&fs, &path).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    bytes.push(0);
    std::fs::write(&path, bytes).unwrap();
    assert!(matches!(read_feature_set(&path), Err(Error::CorruptContainer(_))));
}

#[test]
fn twelve_patients_five_folds_partition() {
    let fs = common::synth(TaskKind::Tile, 60, 3);
    let folds = patient_split(&fs, 5, 9).unwrap();
    assert_eq!(folds.len(), 5);
    let mut seen = vec![0usize; fs.len()];
    for f in &folds {
        for &i in &f.test {
            seen[i] += 1;
        }
        for &i in &f.train {
            assert!(!f.test.contains(&i));
        }
    }
    assert!(seen.iter().all(|&c| c == 1));
    // every patient lands in exactly one test fold
    let mut patient_fold = std::collections::BTreeMap::new();
    for (k, f) in folds.iter().enumerate() {
        for &i in &f.test {
            let prev = patient_fold.insert(fs.patient_of(i).to_string(), k);
            assert!(prev.is_none_or(|p| p == k));
        }
    }
    assert_eq!(patient_fold.len(), 12);
}

#[test]
fn unassigned_samples_train_only() {
    let mut cfg = SynthConfig::new(default_teachers(), 40, TaskKind::Expression);
    cfg.n_patients = 6;
    cfg.n_unassigned = 2;
    let fs = synth_teacher_set(&cfg, 5).unwrap();
    let unassigned: Vec<usize> = (0..fs.len()).filter(|&i| fs.patient_of(i) == UNASSIGNED).collect();
    assert_eq!(unassigned.len(), 2);
    for f in patient_split(&fs, 5, 1).unwrap() {
        for u in &unassigned {
            assert!(f.train.contains(u));
            assert!(!f.test.contains(u));
        }
    }
}

fn arb_config() -> impl Strategy<Value = (SynthConfig, u64)> {
    (
        prop_oneof![Just(TaskKind::Tile), Just(TaskKind::Expression), Just(TaskKind::Survival)],
        1usize..4,
        1usize..12,
        0usize..4,
        0usize..3,
        any::<bool>(),
        any::<u64>(),
    )
        .prop_map(|(task, n_teachers, n, tiles, unassigned, split, seed)| {
            let mut c = SynthConfig::new(default_teachers()[..n_teachers].to_vec(), n, task);
            c.tiles_per_slide = tiles;
            c.n_unassigned = unassigned.min(n);
            c.n_patients = 3;
            c.scale_mode = if split { ScaleMode::Split } else { ScaleMode::Shared };
            c.planted = PlantedMode::Graded;
            (c, seed)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn container_round_trip_is_identity((cfg, seed) in arb_config()) {
        let fs = synth_teacher_set(&cfg, seed).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.shzf");
        write_feature_set(&fs, &path).unwrap();
        let back = read_feature_set(&path).unwrap();
        prop_assert_eq!(back, fs);
    }

    #[test]
    fn depths_are_monotone(l in 1i64..500) {
        let (a, b, c) = extraction_depths(l).unwrap();
        prop_assert!(1 <= a && a <= b && b <= c && c as i64 == l);
        let (a2, b2, _) = extraction_depths(l + 1).unwrap();
        prop_assert!(a2 >= a && b2 >= b);
    }

    #[test]
    fn split_test_folds_partition_identified_samples(n in 5usize..60, k in 1usize..8, seed in any::<u64>()) {
        let mut cfg = SynthConfig::new(default_teachers()[..1].to_vec(), n, TaskKind::Tile);
        cfg.n_patients = 7;
        cfg.n_unassigned = 2;
        let fs = synth_teacher_set(&cfg, seed).unwrap();
        let folds = patient_split(&fs, k, seed).unwrap();
        let mut tested: Vec<usize> = folds.iter().flat_map(|f| f.test.iter().copied()).collect();
        tested.sort_unstable();
        let identified: Vec<usize> = (0..fs.len()).filter(|&i| fs.patient_of(i) != UNASSIGNED).collect();
        prop_assert_eq!(tested, identified);
    }
}
