//! Synthetic teachers with planted label structure.
//!
//! Each sample draws a latent vector per scale. Teacher `i` observes scale `s`
//! through a fixed random mixing matrix scaled by its planted strength, plus
//! isotropic noise. Labels are functions of the latents only, so a teacher
//! with strength zero carries no label information.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{FeatureSet, Manifest, MultiScaleFeature, Sample, TaskKind, TaskLabel, TeacherSpec, UNASSIGNED};
use crate::error::{Error, Result};
use crate::nn::component_rng;

#[derive(Clone, Debug, PartialEq)]
pub enum PlantedMode {
    /// Only the first teacher sees the latents.
    TeacherZeroOnly,
    /// Strengths fall linearly from 1 to 0 across teachers.
    Graded,
    Uniform,
    Custom(Vec<f64>),
}

impl PlantedMode {
    pub fn name(&self) -> &'static str {
        match self {
            PlantedMode::TeacherZeroOnly => "teacher-0-only",
            PlantedMode::Graded => "graded",
            PlantedMode::Uniform => "uniform",
            PlantedMode::Custom(_) => "custom",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "teacher-0-only" => Ok(PlantedMode::TeacherZeroOnly),
            "graded" => Ok(PlantedMode::Graded),
            "uniform" => Ok(PlantedMode::Uniform),
            other => {
                let vals: std::result::Result<Vec<f64>, _> = other.split(',').map(|v| v.trim().parse()).collect();
                match vals {
                    Ok(v) if !v.is_empty() => Ok(PlantedMode::Custom(v)),
                    _ => Err(Error::invalid(format!("unknown planted mode '{other}'"))),
                }
            }
        }
    }

    pub fn strengths(&self, n: usize) -> Result<Vec<f64>> {
        Ok(match self {
            PlantedMode::TeacherZeroOnly => (0..n).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect(),
            PlantedMode::Graded if n == 1 => vec![1.0],
            PlantedMode::Graded => (0..n).map(|i| 1.0 - i as f64 / (n - 1) as f64).collect(),
            PlantedMode::Uniform => vec![1.0; n],
            PlantedMode::Custom(v) => {
                if v.len() != n || v.iter().any(|s| !s.is_finite() || *s < 0.0) {
                    return Err(Error::invalid("custom strengths need one non-negative value per teacher"));
                }
                v.clone()
            }
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScaleMode {
    /// One latent shared by all three scales.
    Shared,
    /// Independent latents per scale; labels depend on all three.
    Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub teachers: Vec<TeacherSpec>,
    /// Samples, or slides when `tiles_per_slide > 0`.
    pub n_samples: usize,
    pub task: TaskKind,
    pub num_classes: usize,
    pub num_genes: usize,
    pub planted: PlantedMode,
    pub scale_mode: ScaleMode,
    pub latent_dim: usize,
    pub noise: f64,
    pub label_noise: f64,
    pub n_patients: usize,
    pub n_unassigned: usize,
    pub tiles_per_slide: usize,
    pub tile_jitter: f64,
    pub censor_fraction: f64,
}

impl SynthConfig {
    pub fn new(teachers: Vec<TeacherSpec>, n_samples: usize, task: TaskKind) -> Self {
        SynthConfig {
            teachers,
            n_samples,
            task,
            num_classes: 4,
            num_genes: 8,
            planted: PlantedMode::TeacherZeroOnly,
            scale_mode: ScaleMode::Shared,
            latent_dim: 4,
            noise: 0.5,
            label_noise: 0.1,
            n_patients: 10,
            n_unassigned: 0,
            tiles_per_slide: 0,
            tile_jitter: 0.3,
            censor_fraction: 0.3,
        }
    }
}

/// Five stand-in teachers with distinct widths and depths.
pub fn default_teachers() -> Vec<TeacherSpec> {
    [("uni2", 32, 24), ("virchow2", 48, 32), ("hoptimus1", 16, 40), ("gigapath", 24, 40), ("phikon2", 40, 24)]
        .into_iter()
        .map(|(n, d, l)| TeacherSpec::new(n, d, l).expect("valid built-in teacher"))
        .collect()
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..rows).map(|_| normals(rng, cols).into_iter().map(|v| v * scale).collect()).collect()
}

fn apply(m: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    m.iter().map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn synth_teacher_set(cfg: &SynthConfig, seed: u64) -> Result<FeatureSet> {
    let n_t = cfg.teachers.len();
    if n_t == 0 {
        return Err(Error::invalid("synthetic set needs at least one teacher"));
    }
    if cfg.n_samples == 0 {
        return Err(Error::invalid("synthetic set needs at least one sample"));
    }
    if cfg.latent_dim == 0 {
        return Err(Error::invalid("latent_dim must be >= 1"));
    }
    if cfg.task == TaskKind::Tile && cfg.num_classes < 2 {
        return Err(Error::invalid("tile task needs at least two classes"));
    }
    if cfg.task == TaskKind::Expression && cfg.num_genes == 0 {
        return Err(Error::invalid("expression task needs at least one gene"));
    }
    if !(0.0..1.0).contains(&cfg.censor_fraction) {
        return Err(Error::invalid("censor_fraction must lie in [0, 1)"));
    }
    let strengths = cfg.planted.strengths(n_t)?;
    let k = cfg.latent_dim;
    let label_in = match cfg.scale_mode {
        ScaleMode::Shared => k,
        ScaleMode::Split => 3 * k,
    };

    // Fixed structure first, each piece from its own stream.
    let mixing: Vec<[Vec<Vec<f64>>; 3]> = cfg
        .teachers
        .iter()
        .enumerate()
        .map(|(i, t)| {
            std::array::from_fn(|s| {
                let mut r = component_rng(seed, &format!("synth.mix.{i}.{s}"));
                gaussian_matrix(&mut r, t.native_dim, k, 1.0 / (k as f64).sqrt())
            })
        })
        .collect();
    let out_dim = match cfg.task {
        TaskKind::Tile => cfg.num_classes,
        TaskKind::Expression => cfg.num_genes,
        TaskKind::Survival => 1,
    };
    let mut lr = component_rng(seed, "synth.label");
    let label_map = gaussian_matrix(&mut lr, out_dim, label_in, 1.0 / (label_in as f64).sqrt());
    let gene_bias = normals(&mut lr, out_dim);

    let mut rng = component_rng(seed, "synth.samples");
    let bag_mode = cfg.tiles_per_slide > 0;
    let tiles = cfg.tiles_per_slide.max(1);
    let mut samples = Vec::with_capacity(cfg.n_samples * tiles);
    let mut patients = BTreeMap::new();
    let mut slides = BTreeMap::new();
    let n_patients = cfg.n_patients.max(1);

    for j in 0..cfg.n_samples {
        let latents: [Vec<f64>; 3] = match cfg.scale_mode {
            ScaleMode::Shared => {
                let u = normals(&mut rng, k);
                [u.clone(), u.clone(), u]
            }
            ScaleMode::Split => std::array::from_fn(|_| normals(&mut rng, k)),
        };
        let label_input: Vec<f64> = match cfg.scale_mode {
            ScaleMode::Shared => latents[0].clone(),
            ScaleMode::Split => latents.concat(),
        };
        let signal = apply(&label_map, &label_input);
        let label = match cfg.task {
            TaskKind::Tile => {
                let noisy: Vec<f64> =
                    signal.iter().map(|v| v + cfg.label_noise * rng.sample::<f64, _>(StandardNormal)).collect();
                let arg = noisy
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
                    .0;
                TaskLabel::Class(arg as u32)
            }
            TaskKind::Expression => TaskLabel::Expression(
                signal
                    .iter()
                    .zip(&gene_bias)
                    .map(|(v, b)| {
                        let e = cfg.label_noise * rng.sample::<f64, _>(StandardNormal);
                        softplus(2.0 * v + 0.5 * b + e) as f32
                    })
                    .collect(),
            ),
            TaskKind::Survival => {
                let risk = 1.5 * signal[0] + cfg.label_noise * rng.sample::<f64, _>(StandardNormal);
                let u: f64 = rng.random_range(f64::EPSILON..1.0);
                let t_event = -u.ln() * 10.0 * (-risk).exp();
                let censored = rng.random::<f64>() < cfg.censor_fraction;
                let time = if censored { t_event * rng.random_range(0.2..1.0) } else { t_event };
                TaskLabel::Survival { time: (time.max(1e-3)) as f32, event: !censored }
            }
        };
        let patient =
            if j < cfg.n_unassigned { UNASSIGNED.to_string() } else { format!("p{:03}", j % n_patients) };
        for t in 0..tiles {
            let id = if bag_mode { format!("s{j:04}_t{t:02}") } else { format!("s{j:04}") };
            let tile_latents: [Vec<f64>; 3] = if bag_mode {
                std::array::from_fn(|s| latents[s].iter().map(|v| v + cfg.tile_jitter * rng.sample::<f64, _>(StandardNormal)).collect())
            } else {
                latents.clone()
            };
            let features = cfg
                .teachers
                .iter()
                .enumerate()
                .map(|(i, teacher)| {
                    let vectors: [Vec<f32>; 3] = std::array::from_fn(|s| {
                        let clean = apply(&mixing[i][s], &tile_latents[s]);
                        (0..teacher.native_dim)
                            .map(|c| {
                                let e: f64 = rng.sample(StandardNormal);
                                (strengths[i] * clean[c] + cfg.noise * e) as f32
                            })
                            .collect()
                    });
                    MultiScaleFeature { vectors }
                })
                .collect();
            patients.insert(id.clone(), patient.clone());
            if bag_mode {
                slides.insert(id.clone(), format!("slide{j:04}"));
            }
            samples.push(Sample { id, label: label.clone(), features });
        }
    }

    let manifest = Manifest {
        task_kind: cfg.task,
        seed,
        num_classes: if cfg.task == TaskKind::Tile { cfg.num_classes } else { 0 },
        patients,
        slides,
        bags: bag_mode,
        planted: cfg.planted.name().to_string(),
        planted_strengths: strengths,
        provenance: format!(
            "synthetic teachers, scale_mode={}, latent_dim={k}, noise={}",
            match cfg.scale_mode {
                ScaleMode::Shared => "shared",
                ScaleMode::Split => "split",
            },
            cfg.noise
        ),
    };
    FeatureSet::new(cfg.teachers.clone(), samples, manifest)
}
