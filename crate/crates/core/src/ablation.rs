//! Teacher-removal, scale-combination and gating on/off ablations.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::feature_store::{FeatureSet, ScaleLevel};
use crate::tasks::{cross_validate, fusion_model_config, ArchOptions, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationKind {
    TeacherRemoval,
    ScaleCombo,
    MoeSwitch,
}

impl AblationKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "teacher_removal" | "teachers" => Ok(Self::TeacherRemoval),
            "scale_combo" | "scales" => Ok(Self::ScaleCombo),
            "moe_switch" | "moe" => Ok(Self::MoeSwitch),
            _ => Err(Error::invalid(format!("unknown ablation kind '{s}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::TeacherRemoval => "teacher_removal",
            Self::ScaleCombo => "scale_combo",
            Self::MoeSwitch => "moe_switch",
        }
    }
}

/// One point of an ablation: which teachers, scales and gating are used.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationConfig {
    pub name: String,
    pub teachers: Vec<usize>,
    pub scales: Vec<ScaleLevel>,
    pub moe: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationPlan {
    pub kind: AblationKind,
    pub schedule: Vec<AblationConfig>,
}

/// Teachers ordered by standalone score, best first. Unscored teachers keep
/// their container order after the scored ones.
pub fn removal_order(fs: &FeatureSet) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..fs.n_teachers()).collect();
    idx.sort_by(|&a, &b| {
        let (sa, sb) = (fs.teachers[a].standalone_score, fs.teachers[b].standalone_score);
        match (sa, sb) {
            (Some(x), Some(y)) => y.total_cmp(&x).then(a.cmp(&b)),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => a.cmp(&b),
        }
    });
    idx
}

impl AblationPlan {
    pub fn new(kind: AblationKind, fs: &FeatureSet, base: &ArchOptions) -> Result<Self> {
        let all: Vec<usize> = (0..fs.n_teachers()).collect();
        let cfg = |name: String, teachers: Vec<usize>, scales: Vec<ScaleLevel>, moe: bool| AblationConfig {
            name,
            teachers,
            scales,
            moe,
        };
        let schedule = match kind {
            AblationKind::TeacherRemoval => {
                if fs.n_teachers() < 2 {
                    return Err(Error::invalid("teacher removal needs at least two teachers"));
                }
                let order = removal_order(fs);
                let name = |set: &[usize]| set.iter().map(|&t| fs.teachers[t].name.as_str()).collect::<Vec<_>>().join("+");
                let mut s = vec![cfg("full".into(), all.clone(), base.scales.clone(), base.moe)];
                for &t in &order {
                    let keep: Vec<usize> = all.iter().copied().filter(|&k| k != t).collect();
                    s.push(cfg(format!("without:{}", name(&[t])), keep, base.scales.clone(), base.moe));
                }
                for k in 2..fs.n_teachers() {
                    let removed = &order[..k];
                    let keep: Vec<usize> = all.iter().copied().filter(|t| !removed.contains(t)).collect();
                    s.push(cfg(format!("without:{}", name(removed)), keep, base.scales.clone(), base.moe));
                }
                s
            }
            AblationKind::ScaleCombo => (1u8..8)
                .map(|mask| {
                    let scales: Vec<ScaleLevel> =
                        ScaleLevel::ALL.iter().copied().filter(|s| mask & (1 << s.index()) != 0).collect();
                    let name = scales.iter().map(|s| s.name()).collect::<Vec<_>>().join("+");
                    cfg(name, all.clone(), scales, base.moe)
                })
                .collect(),
            AblationKind::MoeSwitch => vec![
                cfg("moe_on".into(), all.clone(), base.scales.clone(), true),
                cfg("moe_off".into(), all, base.scales.clone(), false),
            ],
        };
        Ok(AblationPlan { kind, schedule })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub config: String,
    pub metric: String,
    pub mean: f64,
    pub sd: f64,
    pub fold_values: Vec<f64>,
    pub splits_hash: String,
}

impl AblationRow {
    pub fn folds_csv(&self) -> String {
        let mut s = String::from("config,fold,metric,value,splits_hash\n");
        for (i, v) in self.fold_values.iter().enumerate() {
            s.push_str(&format!("{},{i},{},{v},{}\n", self.config, self.metric, self.splits_hash));
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationResult {
    pub kind: AblationKind,
    pub rows: Vec<AblationRow>,
}

impl AblationResult {
    /// Same columns as the shipped ablation fixture tables, plus the splits hash.
    pub fn summary_csv(&self) -> String {
        let mut s = String::from("config,metric,value,ci_low,ci_high,sd,splits_hash\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},,,{},{}\n", r.config, r.metric, r.mean, r.sd, r.splits_hash));
        }
        s
    }

    pub fn get(&self, config: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.config == config)
    }
}

/// Runs every configuration with identical folds and seeds. At most `jobs`
/// configurations run at once.
pub fn run_ablation(
    fs: &FeatureSet,
    plan: &AblationPlan,
    base: &ArchOptions,
    train_cfg: &TrainConfig,
    folds: usize,
    seed: u64,
    jobs: usize,
) -> Result<AblationResult> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot build worker pool: {e}")))?;
    let rows: Vec<Result<AblationRow>> = pool.install(|| {
        plan.schedule
            .par_iter()
            .map(|c| {
                let sub = fs.select_teachers(&c.teachers)?;
                let arch = ArchOptions { scales: c.scales.clone(), moe: c.moe, ..base.clone() };
                let cv = cross_validate(&sub, &|s| fusion_model_config(&sub, &arch, s), train_cfg, folds, seed)?;
                let values: Vec<f64> = cv.folds.iter().map(|f| f.metrics.primary()).collect();
                let n = values.len() as f64;
                let mean = values.iter().sum::<f64>() / n;
                let sd = if values.len() > 1 {
                    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
                } else {
                    0.0
                };
                Ok(AblationRow {
                    config: c.name.clone(),
                    metric: cv.folds[0].metrics.primary_name().to_string(),
                    mean,
                    sd,
                    fold_values: values,
                    splits_hash: cv.splits_hash,
                })
            })
            .collect()
    });
    Ok(AblationResult { kind: plan.kind, rows: rows.into_iter().collect::<Result<_>>()? })
}
