//! The full trainable model: backbone plus task head, and per-unit losses.

use rand_chacha::ChaCha8Rng;

use crate::distill::{distill_on_tape_with, DistillConfig, DistillTerm, LossBreakdown};
use crate::error::{Error, Result};
use crate::feature_store::{FeatureSet, MultiScaleFeature, ScaleLevel, TaskKind};
use crate::fusion::{to_row, FusionConfig, FusionModel, FusionOutput};
use crate::mil::{aggregate_slide, BagAttention, MilHeads};
use crate::nn::ParamStore;
use crate::tape::{Mat, Tape, Var};

use super::heads::{HeadConfig, TaskHead};

#[derive(Clone, Debug, PartialEq)]
pub enum BackboneConfig {
    /// Gated fusion of every teacher; `mil_hidden` enables bag pooling.
    Fusion { fusion: FusionConfig, mil_hidden: Option<usize> },
    /// Head directly on one teacher's features at one scale.
    Probe { teacher: usize, scale: ScaleLevel, native_dim: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub head: HeadConfig,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub enum Backbone {
    Fusion { fusion: FusionModel, mil: Option<MilHeads> },
    Probe { teacher: usize, scale: ScaleLevel },
}

#[derive(Clone, Debug)]
pub struct ShazamModel {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub backbone: Backbone,
    pub head: TaskHead,
}

/// Supervision for one training unit.
#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    Class(usize),
    Expression(Vec<f64>),
    Survival { bin: usize, event: bool },
}

pub struct UnitForward {
    pub fusion: Option<FusionOutput>,
    pub pred: Var,
    pub attention: Vec<BagAttention>,
}

/// Loss values and parameter gradients of one unit.
pub struct UnitLoss {
    pub breakdown: LossBreakdown,
    pub grads: Vec<Option<Mat>>,
    pub clamp_events: usize,
}

impl ShazamModel {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        let mut store = ParamStore::new();
        let (backbone, in_dim) = match &cfg.backbone {
            BackboneConfig::Fusion { fusion, mil_hidden } => {
                let f = FusionModel::new(&mut store, fusion.clone())?;
                let mil = mil_hidden.map(|h| MilHeads::new(&mut store, &fusion.scales, fusion.d, h, cfg.seed));
                let dim = f.task_input_dim();
                (Backbone::Fusion { fusion: f, mil }, dim)
            }
            BackboneConfig::Probe { teacher, scale, native_dim } => {
                (Backbone::Probe { teacher: *teacher, scale: *scale }, *native_dim)
            }
        };
        let head = TaskHead::new(&mut store, cfg.head.clone(), in_dim, cfg.seed)?;
        Ok(ShazamModel { cfg, store, backbone, head })
    }

    pub fn task(&self) -> TaskKind {
        self.cfg.head.task
    }

    pub fn fusion(&self) -> Option<&FusionModel> {
        match &self.backbone {
            Backbone::Fusion { fusion, .. } => Some(fusion),
            Backbone::Probe { .. } => None,
        }
    }

    /// Forward pass for a unit made of the given sample indices.
    pub fn forward_unit(
        &self,
        tape: &mut Tape,
        fs: &FeatureSet,
        tiles: &[usize],
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<UnitForward> {
        if tiles.is_empty() {
            return Err(Error::invalid("unit has no samples"));
        }
        let groups: Vec<Vec<&MultiScaleFeature>> =
            tiles.iter().map(|&i| fs.samples[i].features.iter().collect()).collect();
        let (fusion, x, attention) = match &self.backbone {
            Backbone::Fusion { fusion, mil } => match mil {
                Some(heads) => {
                    let (out, att) = aggregate_slide(tape, &self.store, fusion, heads, &groups)?;
                    let x = out.task_input;
                    (Some(out), x, att)
                }
                None => {
                    if groups.len() != 1 {
                        return Err(Error::invalid("bag input needs a model with MIL heads"));
                    }
                    let out = fusion.forward(tape, &self.store, &groups[0])?;
                    let x = out.task_input;
                    (Some(out), x, Vec::new())
                }
            },
            Backbone::Probe { teacher, scale } => {
                let rows: Vec<Var> = groups
                    .iter()
                    .map(|g| {
                        let f = g.get(*teacher).ok_or_else(|| Error::invalid("probe teacher out of range"))?;
                        Ok(tape.constant(to_row(f.get(*scale))))
                    })
                    .collect::<Result<_>>()?;
                let stacked = tape.concat_rows(&rows);
                (None, tape.mean_rows(stacked), Vec::new())
            }
        };
        let pred = self.head.forward(tape, &self.store, x, dropout);
        if !tape.value(pred).is_finite() {
            return Err(Error::Numeric("head output is not finite".into()));
        }
        Ok(UnitForward { fusion, pred, attention })
    }

    /// Task loss node for a forward pass.
    pub fn task_loss_on_tape(&self, tape: &mut Tape, pred: Var, target: &Target, ridge_l2: f64) -> Result<Var> {
        let width = tape.value(pred).cols;
        match (self.task(), target) {
            (TaskKind::Tile, Target::Class(c)) if *c < width => Ok(tape.cross_entropy(pred, *c)),
            (TaskKind::Expression, Target::Expression(y)) if y.len() == width => {
                let t = tape.constant(Mat::row_vector(y.clone()));
                let diff = tape.sub(pred, t);
                let sq = tape.sum_squares(diff);
                let mse = tape.scale(sq, 1.0 / width as f64);
                if ridge_l2 == 0.0 {
                    return Ok(mse);
                }
                let ws: Vec<Var> = self
                    .head
                    .weight_ids()
                    .into_iter()
                    .map(|id| {
                        let w = self.store.bind(tape, id);
                        tape.sum_squares(w)
                    })
                    .collect();
                let reg = tape.add_all(&ws);
                let reg = tape.scale(reg, ridge_l2);
                Ok(tape.add(mse, reg))
            }
            (TaskKind::Survival, Target::Survival { bin, event }) if *bin < width => {
                Ok(tape.survival_nll(pred, *bin, *event))
            }
            (task, t) => Err(Error::invalid(format!("target {t:?} does not fit a {} head of width {width}", task.name()))),
        }
    }

    /// Builds `task + lambda * distill` for one unit and differentiates it.
    pub fn unit_loss(
        &self,
        fs: &FeatureSet,
        tiles: &[usize],
        target: &Target,
        distill: &DistillConfig,
        ridge_l2: f64,
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<UnitLoss> {
        self.unit_loss_with_targets(fs, tiles, target, distill, ridge_l2, dropout, None)
    }

    /// Distillation target values of a unit, one per (scale, teacher) in
    /// scale-major order.
    pub fn distill_targets(&self, fs: &FeatureSet, tiles: &[usize]) -> Result<Vec<Mat>> {
        let mut tape = Tape::new();
        let fwd = self.forward_unit(&mut tape, fs, tiles, None)?;
        Ok(fwd
            .fusion
            .iter()
            .flat_map(|o| o.scales.iter().flat_map(|s| s.projected.iter()))
            .map(|p| tape.value(*p).clone())
            .collect())
    }

    /// [`Self::unit_loss`] with the distillation targets fixed to `targets`
    /// instead of read off the current forward pass.
    #[allow(clippy::too_many_arguments)]
    pub fn unit_loss_with_targets(
        &self,
        fs: &FeatureSet,
        tiles: &[usize],
        target: &Target,
        distill: &DistillConfig,
        ridge_l2: f64,
        dropout: Option<&mut ChaCha8Rng>,
        targets: Option<&[Mat]>,
    ) -> Result<UnitLoss> {
        let mut tape = Tape::new();
        let fwd = self.forward_unit(&mut tape, fs, tiles, dropout)?;
        let task = self.task_loss_on_tape(&mut tape, fwd.pred, target, ridge_l2)?;
        let (total, distill_total, terms) = match &fwd.fusion {
            Some(out) => {
                let (d, terms) = distill_on_tape_with(&mut tape, &out.scales, distill, targets)?;
                let scaled = tape.scale(d, distill.lambda_distill);
                let total = tape.add(task, scaled);
                let terms: Vec<DistillTerm> = terms
                    .iter()
                    .map(|(s, i, v)| DistillTerm { scale: *s, teacher: *i, value: tape.scalar(*v) })
                    .collect();
                (total, tape.scalar(d), terms)
            }
            None => (task, 0.0, Vec::new()),
        };
        let breakdown = LossBreakdown {
            task_loss: tape.scalar(task),
            distill_terms: terms,
            distill_total,
            total: tape.scalar(total),
        };
        if !breakdown.total.is_finite() {
            return Err(Error::Numeric("loss is not finite".into()));
        }
        let g = tape.backward(total);
        let grads = self.store.ids().map(|id| g.param(id.0).cloned()).collect();
        Ok(UnitLoss { breakdown, grads, clamp_events: tape.clamp_events() })
    }

    /// Prediction vector (logits, expression or hazard logits) and gate weights per active scale.
    pub fn predict_unit(&self, fs: &FeatureSet, tiles: &[usize]) -> Result<(Vec<f64>, Vec<(ScaleLevel, Vec<f64>)>)> {
        let mut tape = Tape::new();
        let fwd = self.forward_unit(&mut tape, fs, tiles, None)?;
        let gates = fwd
            .fusion
            .as_ref()
            .map(|o| o.scales.iter().map(|s| (s.scale, tape.value(s.gate).data.clone())).collect())
            .unwrap_or_default();
        Ok((tape.value(fwd.pred).data.clone(), gates))
    }
}
