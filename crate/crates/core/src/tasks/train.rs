//! Training presets, the training loop, prediction and cross-validation.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::distill::{DistillConfig, DistillTerm, LossBreakdown};
use crate::error::{Error, Result};
use crate::feature_store::{split_units, FeatureSet, ScaleLevel, SlideBag, TaskKind, TaskLabel};
use crate::fusion::FusionConfig;
use crate::metrics::{classification_metrics, concordance_index, pcc, ClassificationMetrics};
use crate::nn::{component_rng, derive_seed};
use crate::tape::Mat;

use super::heads::HeadConfig;
use super::loss::risk_score;
use super::model::{BackboneConfig, ModelConfig, ShazamModel, Target};
use super::optim::{cosine_lr, AdamW, ReduceOnPlateau};
use super::preprocess::{filter_cohort, survival_bins, SurvivalBins};

pub const SURVIVAL_BINS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Schedule {
    Cosine { lr_min: f64 },
    Plateau { factor: f64, patience: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: Schedule,
    pub lambda_distill: f64,
    pub delta: f64,
    pub ridge_l2: f64,
    pub seed: u64,
    pub early_stop_patience: Option<usize>,
    /// Share of training units held out to drive plateau and early stopping.
    pub validation_fraction: f64,
}

impl TrainConfig {
    pub fn tile() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            epochs: 50,
            batch_size: 128,
            schedule: Schedule::Cosine { lr_min: 0.0 },
            lambda_distill: 0.01,
            delta: 1.0,
            ridge_l2: 0.0,
            seed: 0,
            early_stop_patience: None,
            validation_fraction: 0.0,
        }
    }

    /// Head-only probe on a single teacher.
    pub fn tile_baseline() -> Self {
        TrainConfig {
            weight_decay: 0.0,
            epochs: 100,
            batch_size: 64,
            early_stop_patience: Some(30),
            validation_fraction: 0.1,
            ..Self::tile()
        }
    }

    pub fn st() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 64,
            schedule: Schedule::Plateau { factor: 0.5, patience: 5 },
            ridge_l2: 1e-4,
            validation_fraction: 0.1,
            ..Self::tile()
        }
    }

    pub fn survival() -> Self {
        TrainConfig { learning_rate: 2e-4, weight_decay: 1e-3, epochs: 30, batch_size: 8, ..Self::tile() }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "tile" => Ok(Self::tile()),
            "tile-baseline" => Ok(Self::tile_baseline()),
            "st" => Ok(Self::st()),
            "survival" => Ok(Self::survival()),
            other => Err(Error::invalid(format!("unknown preset '{other}'"))),
        }
    }

    pub fn default_for(task: TaskKind) -> Self {
        match task {
            TaskKind::Tile => Self::tile(),
            TaskKind::Expression => Self::st(),
            TaskKind::Survival => Self::survival(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("learning_rate, epochs and batch_size must be positive"));
        }
        if !(0.0..0.5).contains(&self.validation_fraction) {
            return Err(Error::invalid("validation_fraction must lie in [0, 0.5)"));
        }
        if self.ridge_l2 < 0.0 || self.weight_decay < 0.0 {
            return Err(Error::invalid("ridge_l2 and weight_decay must be >= 0"));
        }
        self.distill().validate()
    }

    pub fn distill(&self) -> DistillConfig {
        DistillConfig { delta: self.delta, lambda_distill: self.lambda_distill }
    }
}

/// One training or evaluation unit: a tile, a spot or a slide bag.
#[derive(Clone, Debug, PartialEq)]
pub struct Unit {
    pub id: String,
    pub patient: String,
    pub tiles: Vec<usize>,
    pub label: TaskLabel,
    pub target: Target,
}

/// Units with targets. Survival bins come from `bins` when given, otherwise
/// from the units themselves.
pub fn build_units(fs: &FeatureSet, bins: Option<&SurvivalBins>) -> Result<Vec<Unit>> {
    let bags = fs.bags();
    let own_bins;
    let bins = match (fs.manifest.task_kind, bins) {
        (TaskKind::Survival, None) => {
            own_bins = fit_bins(&bags)?;
            Some(&own_bins)
        }
        (_, b) => b,
    };
    bags.into_iter().map(|b| unit_from_bag(b, bins)).collect()
}

fn fit_bins(bags: &[SlideBag]) -> Result<SurvivalBins> {
    let (times, events): (Vec<f64>, Vec<bool>) = bags
        .iter()
        .map(|b| match b.label {
            TaskLabel::Survival { time, event } => Ok((f64::from(time), event)),
            _ => Err(Error::invalid("survival bins need survival labels")),
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    survival_bins(&times, &events, SURVIVAL_BINS)
}

fn unit_from_bag(b: SlideBag, bins: Option<&SurvivalBins>) -> Result<Unit> {
    let target = match &b.label {
        TaskLabel::Class(c) => Target::Class(*c as usize),
        TaskLabel::Expression(v) => Target::Expression(v.iter().map(|&x| f64::from(x).ln_1p()).collect()),
        TaskLabel::Survival { time, event } => {
            let bins = bins.ok_or_else(|| Error::invalid("survival units need bin edges"))?;
            Target::Survival { bin: bins.assign(f64::from(*time)), event: *event }
        }
    };
    Ok(Unit { id: b.slide_id, patient: b.patient_id, tiles: b.tiles, label: b.label, target })
}

/// Re-derives survival bins from `train` units and applies them to all units.
pub fn rebin(units: &[Unit], train: &[usize]) -> Result<Vec<Unit>> {
    let bags: Vec<SlideBag> = train
        .iter()
        .map(|&i| SlideBag {
            slide_id: units[i].id.clone(),
            patient_id: units[i].patient.clone(),
            tiles: units[i].tiles.clone(),
            label: units[i].label.clone(),
        })
        .collect();
    let bins = fit_bins(&bags)?;
    Ok(units
        .iter()
        .map(|u| {
            let mut u = u.clone();
            if let TaskLabel::Survival { time, event } = u.label {
                u.target = Target::Survival { bin: bins.assign(f64::from(time)), event };
            }
            u
        })
        .collect())
}

/// Applies the slide and gene filters to an expression set grouped by slide.
/// Sets without a slide map are returned unchanged.
pub fn prepare_expression(fs: &FeatureSet) -> Result<FeatureSet> {
    if fs.manifest.task_kind != TaskKind::Expression || fs.manifest.slides.is_empty() {
        return Ok(fs.clone());
    }
    let n_genes = match fs.samples.first().map(|s| &s.label) {
        Some(TaskLabel::Expression(v)) => v.len(),
        _ => return Err(Error::invalid("expression set without expression labels")),
    };
    let mut slide_ids: Vec<&str> = Vec::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for (i, s) in fs.samples.iter().enumerate() {
        let sid = fs.manifest.slides.get(&s.id).map_or(s.id.as_str(), String::as_str);
        match slide_ids.iter().position(|x| *x == sid) {
            Some(k) => members[k].push(i),
            None => {
                slide_ids.push(sid);
                members.push(vec![i]);
            }
        }
    }
    let matrices: Vec<Vec<Vec<f64>>> = members
        .iter()
        .map(|m| {
            m.iter()
                .map(|&i| match &fs.samples[i].label {
                    TaskLabel::Expression(v) => v.iter().map(|&x| f64::from(x)).collect(),
                    _ => Vec::new(),
                })
                .collect()
        })
        .collect();
    let (kept_slides, kept_genes) = filter_cohort(&matrices, n_genes)?;
    if kept_genes.is_empty() {
        return Err(Error::EmptyCohort("every gene was filtered out".into()));
    }
    let keep: std::collections::BTreeSet<usize> = kept_slides.iter().flat_map(|&k| members[k].iter().copied()).collect();
    let mut out = fs.clone();
    out.samples = fs
        .samples
        .iter()
        .enumerate()
        .filter(|(i, _)| keep.contains(i))
        .map(|(_, s)| {
            let mut s = s.clone();
            if let TaskLabel::Expression(v) = &s.label {
                s.label = TaskLabel::Expression(kept_genes.iter().map(|&g| v[g]).collect());
            }
            s
        })
        .collect();
    let ids: std::collections::BTreeSet<&str> = out.samples.iter().map(|s| s.id.as_str()).collect();
    out.manifest.patients.retain(|k, _| ids.contains(k.as_str()));
    out.manifest.slides.retain(|k, _| ids.contains(k.as_str()));
    Ok(out)
}

/// Architecture options shared by every model built from a feature set.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchOptions {
    pub d: usize,
    pub heads: usize,
    pub layers: usize,
    pub moe: bool,
    pub scales: Vec<ScaleLevel>,
    pub mil_hidden: usize,
    pub head_hidden: Option<Vec<usize>>,
    pub dropout: Option<f64>,
}

impl Default for ArchOptions {
    fn default() -> Self {
        ArchOptions {
            d: 256,
            heads: 4,
            layers: 4,
            moe: true,
            scales: ScaleLevel::ALL.to_vec(),
            mil_hidden: crate::mil::DEFAULT_HIDDEN,
            head_hidden: None,
            dropout: None,
        }
    }
}

fn head_for(fs: &FeatureSet, arch: &ArchOptions) -> Result<HeadConfig> {
    let mut head = match fs.manifest.task_kind {
        TaskKind::Tile => HeadConfig::tile(fs.manifest.num_classes),
        TaskKind::Expression => match fs.samples.first().map(|s| &s.label) {
            Some(TaskLabel::Expression(v)) => HeadConfig::expression(v.len()),
            _ => return Err(Error::invalid("expression set without samples")),
        },
        TaskKind::Survival => HeadConfig::survival(SURVIVAL_BINS),
    };
    if let Some(h) = &arch.head_hidden {
        head.hidden = h.clone();
    }
    if let Some(p) = arch.dropout {
        head.dropout = p;
    }
    Ok(head)
}

/// Fusion model over every teacher of `fs`.
pub fn fusion_model_config(fs: &FeatureSet, arch: &ArchOptions, seed: u64) -> Result<ModelConfig> {
    let mut fusion = FusionConfig::new(fs.teachers.iter().map(|t| t.native_dim).collect(), arch.d, seed);
    fusion.teacher_names = fs.teachers.iter().map(|t| t.name.clone()).collect();
    fusion.heads = arch.heads;
    fusion.layers = arch.layers;
    fusion.moe = arch.moe;
    fusion.scales = arch.scales.clone();
    fusion.validate()?;
    let mil_hidden = fs.manifest.bags.then_some(arch.mil_hidden);
    Ok(ModelConfig { backbone: BackboneConfig::Fusion { fusion, mil_hidden }, head: head_for(fs, arch)?, seed })
}

/// Head-only probe on one teacher at one scale.
pub fn probe_model_config(
    fs: &FeatureSet,
    teacher: usize,
    scale: ScaleLevel,
    arch: &ArchOptions,
    seed: u64,
) -> Result<ModelConfig> {
    let t = fs.teachers.get(teacher).ok_or_else(|| Error::invalid("probe teacher out of range"))?;
    Ok(ModelConfig {
        backbone: BackboneConfig::Probe { teacher, scale, native_dim: t.native_dim },
        head: head_for(fs, arch)?,
        seed,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub split: &'static str,
    pub task_loss: f64,
    pub distill_total: f64,
    pub total: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    pub steps: Vec<LossBreakdown>,
    pub clamp_events: usize,
    pub stopped_at: Option<usize>,
}

impl TrainReport {
    pub fn log_csv(&self) -> String {
        let mut s = String::from("epoch,split,task_loss,distill_total,total,lr\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{},{},{},{},{}\n", e.epoch, e.split, e.task_loss, e.distill_total, e.total, e.lr));
        }
        s
    }

    pub fn loss_terms_csv(&self, teacher_names: &[String], scales: &[ScaleLevel]) -> String {
        let mut s = LossBreakdown::csv_header(teacher_names, scales);
        s.push('\n');
        for (i, b) in self.steps.iter().enumerate() {
            s.push_str(&b.csv_row(i));
            s.push('\n');
        }
        s
    }
}

fn mean_breakdown(items: &[LossBreakdown]) -> LossBreakdown {
    let n = items.len().max(1) as f64;
    let mut terms: Vec<DistillTerm> = items.first().map(|b| b.distill_terms.clone()).unwrap_or_default();
    for t in &mut terms {
        t.value = 0.0;
    }
    for b in items {
        for (acc, t) in terms.iter_mut().zip(&b.distill_terms) {
            acc.value += t.value / n;
        }
    }
    LossBreakdown {
        task_loss: items.iter().map(|b| b.task_loss).sum::<f64>() / n,
        distill_terms: terms,
        distill_total: items.iter().map(|b| b.distill_total).sum::<f64>() / n,
        total: items.iter().map(|b| b.total).sum::<f64>() / n,
    }
}

/// Mean loss and, optionally, mean gradient over a batch, reduced in index order.
pub fn batch_loss(
    model: &ShazamModel,
    fs: &FeatureSet,
    units: &[Unit],
    batch: &[usize],
    cfg: &TrainConfig,
    dropout_tag: Option<usize>,
) -> Result<(LossBreakdown, Vec<Mat>, usize)> {
    let dcfg = cfg.distill();
    let results: Vec<Result<super::model::UnitLoss>> = batch
        .par_iter()
        .map(|&u| {
            let mut rng = dropout_tag.map(|step| component_rng(cfg.seed, &format!("dropout.{step}.{u}")));
            model.unit_loss(fs, &units[u].tiles, &units[u].target, &dcfg, cfg.ridge_l2, rng.as_mut())
        })
        .collect();
    let mut grads: Vec<Mat> = model.store.iter().map(|(_, m)| Mat::zeros(m.rows, m.cols)).collect();
    let mut parts = Vec::with_capacity(batch.len());
    let mut clamps = 0;
    let scale = 1.0 / batch.len() as f64;
    for r in results {
        let r = r?;
        for (acc, g) in grads.iter_mut().zip(&r.grads) {
            if let Some(g) = g {
                for (a, b) in acc.data.iter_mut().zip(&g.data) {
                    *a += b * scale;
                }
            }
        }
        clamps += r.clamp_events;
        parts.push(r.breakdown);
    }
    Ok((mean_breakdown(&parts), grads, clamps))
}

fn abort(step: usize, e: Error) -> Error {
    match e {
        Error::Numeric(reason) | Error::DegenerateVector(reason) => Error::TrainingAborted { step, reason },
        other => other,
    }
}

/// Trains `model` on `units[train]`. Deterministic given `cfg.seed`.
pub fn train(model: &mut ShazamModel, fs: &FeatureSet, units: &[Unit], train: &[usize], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("no training units"));
    }
    for &u in train {
        if units[u].label.kind() != model.task() {
            return Err(Error::invalid(format!(
                "unit '{}' is labelled for {} but the head is {}",
                units[u].id,
                units[u].label.kind().name(),
                model.task().name()
            )));
        }
    }
    let mut order = train.to_vec();
    let mut val = Vec::new();
    if cfg.validation_fraction > 0.0 && train.len() >= 10 {
        order.shuffle(&mut component_rng(cfg.seed, "validation"));
        let n_val = ((train.len() as f64) * cfg.validation_fraction).ceil() as usize;
        val = order.split_off(order.len() - n_val);
        order.sort_unstable();
        val.sort_unstable();
    }
    let batches_per_epoch = order.len().div_ceil(cfg.batch_size);
    let total_steps = batches_per_epoch * cfg.epochs;
    let mut opt = AdamW::new(model.store.values_mut(), cfg.weight_decay);
    let mut plateau = match cfg.schedule {
        Schedule::Plateau { factor, patience } => Some(ReduceOnPlateau::new(cfg.learning_rate, factor, patience)),
        Schedule::Cosine { .. } => None,
    };
    let mut report = TrainReport::default();
    let mut step = 0;
    let mut best: Option<(f64, crate::nn::ParamStore)> = None;
    let mut stale = 0;
    for epoch in 0..cfg.epochs {
        let mut epoch_order = order.clone();
        epoch_order.shuffle(&mut component_rng(cfg.seed, &format!("epoch.{epoch}")));
        let mut parts = Vec::with_capacity(batches_per_epoch);
        let mut weights = Vec::with_capacity(batches_per_epoch);
        let mut lr = cfg.learning_rate;
        for batch in epoch_order.chunks(cfg.batch_size) {
            lr = match (cfg.schedule, &plateau) {
                (Schedule::Cosine { lr_min }, _) => cosine_lr(step, total_steps, cfg.learning_rate, lr_min)?,
                (_, Some(p)) => p.lr,
                (_, None) => cfg.learning_rate,
            };
            let (b, grads, clamps) = batch_loss(model, fs, units, batch, cfg, Some(step)).map_err(|e| abort(step, e))?;
            if !b.total.is_finite() {
                return Err(Error::TrainingAborted { step, reason: "loss is NaN".into() });
            }
            opt.step(model.store.values_mut(), &grads, lr)?;
            if model.store.iter().any(|(_, m)| !m.is_finite()) {
                return Err(Error::TrainingAborted { step, reason: "parameters became non-finite".into() });
            }
            report.clamp_events += clamps;
            weights.push(batch.len() as f64);
            parts.push(b.clone());
            report.steps.push(b);
            step += 1;
        }
        let n: f64 = weights.iter().sum();
        let avg = |f: fn(&LossBreakdown) -> f64| parts.iter().zip(&weights).map(|(b, w)| f(b) * w).sum::<f64>() / n;
        report.epochs.push(EpochLog {
            epoch,
            split: "train",
            task_loss: avg(|b| b.task_loss),
            distill_total: avg(|b| b.distill_total),
            total: avg(|b| b.total),
            lr,
        });
        let monitored = if val.is_empty() {
            report.epochs.last().map(|e| e.total).unwrap_or(f64::INFINITY)
        } else {
            let (vb, _, _) = batch_loss(model, fs, units, &val, cfg, None).map_err(|e| abort(step, e))?;
            report.epochs.push(EpochLog {
                epoch,
                split: "val",
                task_loss: vb.task_loss,
                distill_total: vb.distill_total,
                total: vb.total,
                lr,
            });
            vb.total
        };
        if let Some(p) = plateau.as_mut() {
            p.observe(monitored);
        }
        if let Some(patience) = cfg.early_stop_patience {
            if best.as_ref().is_none_or(|(b, _)| monitored < *b) {
                best = Some((monitored, model.store.clone()));
                stale = 0;
            } else {
                stale += 1;
                if stale >= patience {
                    report.stopped_at = Some(epoch);
                    break;
                }
            }
        }
    }
    if let Some((_, params)) = best {
        model.store = params;
    }
    if report.clamp_events > 0 {
        log::warn!("survival probabilities were clamped {} times during training", report.clamp_events);
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    pub unit_ids: Vec<String>,
    pub outputs: Vec<Vec<f64>>,
    pub gates: Vec<Vec<(ScaleLevel, Vec<f64>)>>,
}

pub fn predict(model: &ShazamModel, fs: &FeatureSet, units: &[Unit], which: &[usize]) -> Result<Predictions> {
    let res: Vec<Result<(Vec<f64>, Vec<(ScaleLevel, Vec<f64>)>)>> =
        which.par_iter().map(|&u| model.predict_unit(fs, &units[u].tiles)).collect();
    let mut p = Predictions { unit_ids: Vec::new(), outputs: Vec::new(), gates: Vec::new() };
    for (&u, r) in which.iter().zip(res) {
        let (o, g) = r?;
        p.unit_ids.push(units[u].id.clone());
        p.outputs.push(o);
        p.gates.push(g);
    }
    Ok(p)
}

impl Predictions {
    pub fn gates_csv(&self, n_teachers: usize) -> String {
        let mut s = String::from("unit_id,scale");
        for i in 0..n_teachers {
            s.push_str(&format!(",g{i}"));
        }
        s.push('\n');
        for (id, gs) in self.unit_ids.iter().zip(&self.gates) {
            for (scale, g) in gs {
                s.push_str(&format!("{id},{}", scale.name()));
                for v in g {
                    s.push_str(&format!(",{v}"));
                }
                s.push('\n');
            }
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum EvalMetrics {
    Tile(ClassificationMetrics),
    Expression { mean_pcc: f64, per_gene: Vec<Option<f64>> },
    Survival { c_index: f64 },
}

impl EvalMetrics {
    /// Balanced accuracy, mean PCC or C-index.
    pub fn primary(&self) -> f64 {
        match self {
            EvalMetrics::Tile(m) => m.balanced_acc,
            EvalMetrics::Expression { mean_pcc, .. } => *mean_pcc,
            EvalMetrics::Survival { c_index } => *c_index,
        }
    }

    pub fn primary_name(&self) -> &'static str {
        match self {
            EvalMetrics::Tile(_) => "balanced_acc",
            EvalMetrics::Expression { .. } => "pcc",
            EvalMetrics::Survival { .. } => "c_index",
        }
    }
}

pub fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (i, &x)| if x > b.1 { (i, x) } else { b }).0
}

/// Scores predictions against the units they were made for.
pub fn score(task: TaskKind, num_classes: usize, preds: &Predictions, units: &[Unit], which: &[usize]) -> Result<EvalMetrics> {
    match task {
        TaskKind::Tile => {
            let pred: Vec<usize> = preds.outputs.iter().map(|o| argmax(o)).collect();
            let truth = which
                .iter()
                .map(|&u| match units[u].target {
                    Target::Class(c) => Ok(c),
                    _ => Err(Error::invalid("tile scoring needs class targets")),
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(EvalMetrics::Tile(classification_metrics(&pred, &truth, num_classes)?))
        }
        TaskKind::Expression => {
            let truth: Vec<&Vec<f64>> = which
                .iter()
                .map(|&u| match &units[u].target {
                    Target::Expression(v) => Ok(v),
                    _ => Err(Error::invalid("expression scoring needs expression targets")),
                })
                .collect::<Result<_>>()?;
            let genes = truth.first().map_or(0, |v| v.len());
            let per_gene: Vec<Option<f64>> = (0..genes)
                .map(|g| {
                    let p: Vec<f64> = preds.outputs.iter().map(|o| o[g]).collect();
                    let t: Vec<f64> = truth.iter().map(|v| v[g]).collect();
                    pcc(&p, &t).ok()
                })
                .collect();
            let defined: Vec<f64> = per_gene.iter().flatten().copied().collect();
            if defined.is_empty() {
                return Err(Error::UndefinedCorrelation("no gene has a defined correlation".into()));
            }
            Ok(EvalMetrics::Expression { mean_pcc: defined.iter().sum::<f64>() / defined.len() as f64, per_gene })
        }
        TaskKind::Survival => {
            let risk: Vec<f64> = preds.outputs.iter().map(|o| risk_score(o)).collect();
            let (time, event): (Vec<f64>, Vec<bool>) = which
                .iter()
                .map(|&u| match units[u].label {
                    TaskLabel::Survival { time, event } => Ok((f64::from(time), event)),
                    _ => Err(Error::invalid("survival scoring needs survival labels")),
                })
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .unzip();
            Ok(EvalMetrics::Survival { c_index: concordance_index(&risk, &time, &event)? })
        }
    }
}

#[derive(Clone, Debug)]
pub struct FoldResult {
    pub fold: usize,
    pub test: Vec<usize>,
    pub metrics: EvalMetrics,
    pub predictions: Predictions,
    pub report: TrainReport,
}

#[derive(Clone, Debug)]
pub struct CvResult {
    pub folds: Vec<FoldResult>,
    pub splits_hash: String,
    pub units: Vec<Unit>,
}

impl CvResult {
    pub fn mean_primary(&self) -> f64 {
        self.folds.iter().map(|f| f.metrics.primary()).sum::<f64>() / self.folds.len() as f64
    }
}

/// SHA-256 over the test unit ids of every fold, in fold order.
pub fn splits_hash(units: &[Unit], folds: &[crate::feature_store::Fold]) -> String {
    let mut h = Sha256::new();
    for (i, f) in folds.iter().enumerate() {
        h.update(format!("fold{i}:").as_bytes());
        for &u in &f.test {
            h.update(units[u].id.as_bytes());
            h.update(b",");
        }
    }
    hex::encode(h.finalize())
}

/// Patient-level k-fold cross-validation of one model configuration.
///
/// Fold `f` initialises its model from `derive_seed(seed, "fold.f")`, so two
/// configurations run with the same seed share folds and seeds.
pub fn cross_validate(
    fs: &FeatureSet,
    build: &(dyn Fn(u64) -> Result<ModelConfig> + Sync),
    cfg: &TrainConfig,
    k: usize,
    seed: u64,
) -> Result<CvResult> {
    let units = build_units(fs, None)?;
    let patients: Vec<&str> = units.iter().map(|u| u.patient.as_str()).collect();
    let folds = split_units(&patients, k, seed)?;
    let hash = splits_hash(&units, &folds);
    let mut results = Vec::with_capacity(folds.len());
    for (f, fold) in folds.iter().enumerate() {
        let fold_units =
            if fs.manifest.task_kind == TaskKind::Survival { rebin(&units, &fold.train)? } else { units.clone() };
        let fold_seed = derive_seed(seed, &format!("fold.{f}"));
        let mut model = ShazamModel::new(build(fold_seed)?)?;
        let fold_cfg = TrainConfig { seed: fold_seed, ..cfg.clone() };
        let report = train(&mut model, fs, &fold_units, &fold.train, &fold_cfg)?;
        let predictions = predict(&model, fs, &fold_units, &fold.test)?;
        let metrics = score(fs.manifest.task_kind, fs.manifest.num_classes, &predictions, &fold_units, &fold.test)?;
        results.push(FoldResult { fold: f, test: fold.test.clone(), metrics, predictions, report });
    }
    Ok(CvResult { folds: results, splits_hash: hash, units })
}
