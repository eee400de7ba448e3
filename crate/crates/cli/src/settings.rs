//! Training and architecture settings assembled from presets, an optional
//! config file and command-line flags, in that order of precedence.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use shazam_core::feature_store::{read_feature_set, ScaleLevel, TaskKind};
use shazam_core::tasks::{prepare_expression, ArchOptions, Schedule, TrainConfig};
use shazam_core::FeatureSet;

use crate::config::KeyValues;

#[derive(Args, Debug, Clone, Default)]
pub struct ModelArgs {
    /// Task the data must be labelled for: tile, expression or survival.
    #[arg(long)]
    pub task: Option<String>,
    /// Named training preset: tile, tile-baseline, st or survival.
    #[arg(long)]
    pub preset: Option<String>,
    /// key = value file with preset overrides.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub lambda_distill: Option<f64>,
    /// Replace the gate by uniform weights.
    #[arg(long)]
    pub no_moe: bool,
    /// Comma-separated active scales, e.g. low,high.
    #[arg(long)]
    pub scales: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Shared embedding width.
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    /// Number of patient-level folds.
    #[arg(long)]
    pub folds: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct Settings {
    pub preset: String,
    pub train: TrainConfig,
    pub arch: ArchOptions,
    pub folds: usize,
    pub fold: usize,
    /// Head-only probe on this teacher instead of the fusion model.
    pub probe: Option<String>,
    pub probe_scale: ScaleLevel,
}

fn preset_for(task: TaskKind) -> &'static str {
    match task {
        TaskKind::Tile => "tile",
        TaskKind::Expression => "st",
        TaskKind::Survival => "survival",
    }
}

fn parse_list(s: &str) -> Result<Vec<usize>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|v| v.trim().parse::<usize>().with_context(|| format!("bad list entry '{v}'"))).collect()
}

impl Settings {
    /// `data_task` fills in the task when neither flag nor file names one.
    pub fn resolve(args: &ModelArgs, data_task: TaskKind, seed: u64) -> Result<Self> {
        let mut file = match &args.config {
            Some(p) => Some(KeyValues::read(p)?),
            None => None,
        };
        let file_task = match file.as_mut() {
            Some(kv) => kv.take("task"),
            None => None,
        };
        let task = match args.task.as_deref().or(file_task.as_deref()) {
            Some(t) => Some(TaskKind::parse(t)?),
            None => None,
        };
        if let Some(t) = task {
            if t != data_task {
                bail!("--task {} does not match the data, which is labelled for {}", t.name(), data_task.name());
            }
        }
        let file_preset = file.as_mut().and_then(|kv| kv.take("preset"));
        let preset = args.preset.clone().or(file_preset).unwrap_or_else(|| preset_for(data_task).to_string());
        let mut train = TrainConfig::preset(&preset)?;
        let mut arch = ArchOptions::default();
        let mut folds = 5;
        let mut fold = 0;
        let mut probe = None;
        let mut probe_scale = ScaleLevel::High;
        if preset == "tile-baseline" {
            arch.head_hidden = Some(Vec::new());
        }
        if let Some(kv) = file.as_mut() {
            macro_rules! set {
                ($key:literal, $target:expr) => {
                    if let Some(v) = kv.parsed($key)? {
                        $target = v;
                    }
                };
            }
            set!("learning_rate", train.learning_rate);
            set!("weight_decay", train.weight_decay);
            set!("epochs", train.epochs);
            set!("batch_size", train.batch_size);
            set!("lambda_distill", train.lambda_distill);
            set!("delta", train.delta);
            set!("ridge_l2", train.ridge_l2);
            set!("validation_fraction", train.validation_fraction);
            if let Some(p) = kv.parsed::<usize>("early_stop_patience")? {
                train.early_stop_patience = (p > 0).then_some(p);
            }
            if let Some(f) = kv.parsed::<f64>("plateau_factor")? {
                let patience = kv.parsed::<usize>("plateau_patience")?.unwrap_or(5);
                train.schedule = Schedule::Plateau { factor: f, patience };
            }
            set!("d", arch.d);
            set!("heads", arch.heads);
            set!("layers", arch.layers);
            set!("moe", arch.moe);
            set!("mil_hidden", arch.mil_hidden);
            if let Some(s) = kv.take("scales") {
                arch.scales = ScaleLevel::parse_list(&s)?;
            }
            if let Some(h) = kv.take("head_hidden") {
                arch.head_hidden = Some(parse_list(&h)?);
            }
            if let Some(p) = kv.parsed::<f64>("dropout")? {
                arch.dropout = Some(p);
            }
            set!("folds", folds);
            set!("fold", fold);
            probe = kv.take("probe");
            if let Some(s) = kv.take("probe_scale") {
                probe_scale = ScaleLevel::parse(&s)?;
            }
        }
        if let Some(kv) = file {
            kv.finish()?;
        }
        if let Some(v) = args.lambda_distill {
            train.lambda_distill = v;
        }
        if args.no_moe {
            arch.moe = false;
        }
        if let Some(s) = &args.scales {
            arch.scales = ScaleLevel::parse_list(s)?;
        }
        if let Some(v) = args.epochs {
            train.epochs = v;
        }
        if let Some(v) = args.batch_size {
            train.batch_size = v;
        }
        if let Some(v) = args.lr {
            train.learning_rate = v;
        }
        if let Some(v) = args.d {
            arch.d = v;
        }
        if let Some(v) = args.heads {
            arch.heads = v;
        }
        if let Some(v) = args.layers {
            arch.layers = v;
        }
        if let Some(v) = args.folds {
            folds = v;
        }
        if folds < 2 {
            bail!("folds must be at least 2");
        }
        if fold >= folds {
            bail!("fold {fold} is out of range for {folds} folds");
        }
        train.seed = seed;
        train.validate()?;
        Ok(Settings { preset, train, arch, folds, fold, probe, probe_scale })
    }
}

/// Resolves relative data paths against the data root when one is set.
pub fn data_path(root: Option<&Path>, p: &Path) -> PathBuf {
    match root {
        Some(r) if p.is_relative() => r.join(p),
        _ => p.to_path_buf(),
    }
}

/// Reads a container. Expression sets get the slide and gene filters.
pub fn load_data(path: &Path) -> Result<FeatureSet> {
    let fs = read_feature_set(path).with_context(|| format!("cannot read feature container {}", path.display()))?;
    if fs.manifest.task_kind == TaskKind::Expression {
        return Ok(prepare_expression(&fs)?);
    }
    Ok(fs)
}
