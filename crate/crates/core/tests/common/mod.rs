#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use shazam_core::feature_store::{
    default_teachers, synth_teacher_set, FeatureSet, PlantedMode, ScaleMode, SynthConfig, TaskKind, TeacherSpec,
};

/// Independent distillation oracle written straight from the formula.
pub fn oracle_pair(z: &[f64], t: &[f64], delta: f64) -> f64 {
    let nz = z.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nt = t.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut cos = 0.0;
    let mut hub = 0.0;
    for k in 0..z.len() {
        let a = z[k] / nz;
        let b = t[k] / nt;
        cos += a * b;
        let e = (a - b).abs();
        hub += if e <= delta { 0.5 * e * e } else { delta * (e - 0.5 * delta) };
    }
    (1.0 - cos) + hub / z.len() as f64
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn small_teachers() -> Vec<TeacherSpec> {
    vec![
        TeacherSpec::new("a", 6, 12).unwrap(),
        TeacherSpec::new("b", 9, 24).unwrap(),
        TeacherSpec::new("c", 5, 8).unwrap(),
    ]
}

pub fn synth(task: TaskKind, n: usize, seed: u64) -> FeatureSet {
    let mut c = SynthConfig::new(default_teachers(), n, task);
    c.n_patients = 12;
    synth_teacher_set(&c, seed).unwrap()
}

pub fn synth_with(
    teachers: Vec<TeacherSpec>,
    task: TaskKind,
    n: usize,
    planted: PlantedMode,
    scale_mode: ScaleMode,
    tiles_per_slide: usize,
    seed: u64,
) -> FeatureSet {
    let mut c = SynthConfig::new(teachers, n, task);
    c.planted = planted;
    c.scale_mode = scale_mode;
    c.tiles_per_slide = tiles_per_slide;
    c.n_patients = 20;
    synth_teacher_set(&c, seed).unwrap()
}
