//! Multi-level distillation: cosine distance plus element-wise Huber on
//! unit-normalised student and teacher vectors.

use crate::error::{Error, Result};
use crate::feature_store::ScaleLevel;
use crate::fusion::ScaleOutput;
use crate::tape::{Mat, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistillConfig {
    pub delta: f64,
    pub lambda_distill: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig { delta: 1.0, lambda_distill: 0.01 }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::invalid(format!("delta must be > 0, got {}", self.delta)));
        }
        if !(self.lambda_distill >= 0.0 && self.lambda_distill.is_finite()) {
            return Err(Error::invalid(format!("lambda_distill must be >= 0, got {}", self.lambda_distill)));
        }
        Ok(())
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn unit(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::DegenerateVector(format!("vector norm is {n}")));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

fn same_len(z: &[f64], t: &[f64]) -> Result<()> {
    if z.len() != t.len() || z.is_empty() {
        return Err(Error::invalid(format!("length mismatch: {} vs {}", z.len(), t.len())));
    }
    Ok(())
}

/// `1 - cos(z, t)`, in `[0, 2]`.
pub fn cosine_distance(z: &[f64], t: &[f64]) -> Result<f64> {
    same_len(z, t)?;
    let (zu, tu) = (unit(z)?, unit(t)?);
    let cos: f64 = zu.iter().zip(&tu).map(|(a, b)| a * b).sum();
    Ok((1.0 - cos).clamp(0.0, 2.0))
}

pub fn huber(e: f64, delta: f64) -> f64 {
    let a = e.abs();
    if a <= delta {
        0.5 * e * e
    } else {
        delta * (a - 0.5 * delta)
    }
}

/// Mean Huber penalty over coordinates of `z - t`.
pub fn huber_elementwise(z: &[f64], t: &[f64], delta: f64) -> Result<f64> {
    same_len(z, t)?;
    if !(delta > 0.0) {
        return Err(Error::invalid(format!("delta must be > 0, got {delta}")));
    }
    Ok(z.iter().zip(t).map(|(a, b)| huber(a - b, delta)).sum::<f64>() / z.len() as f64)
}

pub fn distill_pair(z: &[f64], t: &[f64], cfg: &DistillConfig) -> Result<f64> {
    same_len(z, t)?;
    let (zu, tu) = (unit(z)?, unit(t)?);
    Ok(cosine_distance(&zu, &tu)? + huber_elementwise(&zu, &tu, cfg.delta)?)
}

/// Mean of `distill_pair(z_s, t_s_i)` over every scale `s` and teacher `i`.
///
/// `student[s]` is paired with `targets[s]`, which holds one vector per teacher.
pub fn distill_total(student: &[Vec<f64>], targets: &[Vec<Vec<f64>>], cfg: &DistillConfig) -> Result<f64> {
    if student.is_empty() || student.len() != targets.len() {
        return Err(Error::invalid("every student scale needs its teacher targets"));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (z, ts) in student.iter().zip(targets) {
        if ts.is_empty() {
            return Err(Error::invalid("missing teacher targets for a scale"));
        }
        for t in ts {
            sum += distill_pair(z, t, cfg)?;
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistillTerm {
    pub scale: ScaleLevel,
    pub teacher: usize,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    pub task_loss: f64,
    pub distill_terms: Vec<DistillTerm>,
    pub distill_total: f64,
    pub total: f64,
}

/// Combines task and distillation losses as `task + lambda * distill`.
pub fn total_loss(task_loss: f64, distill_total: f64, cfg: &DistillConfig) -> Result<LossBreakdown> {
    let total = task_loss + cfg.lambda_distill * distill_total;
    if !total.is_finite() || !task_loss.is_finite() || !distill_total.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss: task={task_loss} distill={distill_total}")));
    }
    Ok(LossBreakdown { task_loss, distill_terms: Vec::new(), distill_total, total })
}

impl LossBreakdown {
    /// CSV header for per-step loss rows.
    pub fn csv_header(teacher_names: &[String], scales: &[ScaleLevel]) -> String {
        let mut cols = vec!["step".to_string(), "task_loss".into(), "distill_total".into(), "total".into()];
        for s in scales {
            for t in teacher_names {
                cols.push(format!("distill.{}.{t}", s.name()));
            }
        }
        cols.join(",")
    }

    pub fn csv_row(&self, step: usize) -> String {
        let mut cols = vec![step.to_string(), self.task_loss.to_string(), self.distill_total.to_string(), self.total.to_string()];
        cols.extend(self.distill_terms.iter().map(|t| t.value.to_string()));
        cols.join(",")
    }
}

/// Differentiable `distill_pair` against a target that is already constant.
pub fn distill_pair_on_tape(tape: &mut Tape, z: Var, target: Var, delta: f64) -> Result<Var> {
    let zu = tape.l2_normalize_rows(z)?;
    let tu = tape.l2_normalize_rows(target)?;
    let dot = tape.mul(zu, tu);
    let cos = tape.sum(dot);
    let neg = tape.scale(cos, -1.0);
    let cos_dist = tape.add_scalar(neg, 1.0);
    let diff = tape.sub(zu, tu);
    let hub = tape.huber_mean(diff, delta);
    Ok(tape.add(cos_dist, hub))
}

/// Distillation loss over the scale outputs of one forward pass.
///
/// Targets are the projected teacher vectors cut from the graph, so no
/// gradient reaches the target path. Returns the mean and the per-term nodes.
pub fn distill_on_tape(
    tape: &mut Tape,
    scales: &[ScaleOutput],
    cfg: &DistillConfig,
) -> Result<(Var, Vec<(ScaleLevel, usize, Var)>)> {
    distill_on_tape_with(tape, scales, cfg, None)
}

/// Like [`distill_on_tape`], but with explicit target values, one per
/// (scale, teacher) in scale-major order.
pub fn distill_on_tape_with(
    tape: &mut Tape,
    scales: &[ScaleOutput],
    cfg: &DistillConfig,
    targets: Option<&[Mat]>,
) -> Result<(Var, Vec<(ScaleLevel, usize, Var)>)> {
    let expected: usize = scales.iter().map(|s| s.projected.len()).sum();
    if targets.is_some_and(|t| t.len() != expected) {
        return Err(Error::invalid(format!("expected {expected} distillation targets")));
    }
    let mut terms = Vec::new();
    for s in scales {
        for (i, &p) in s.projected.iter().enumerate() {
            let target = match targets {
                Some(t) => tape.constant(t[terms.len()].clone()),
                None => tape.detach(p),
            };
            terms.push((s.scale, i, distill_pair_on_tape(tape, s.z, target, cfg.delta)?));
        }
    }
    if terms.is_empty() {
        return Err(Error::invalid("no distillation terms"));
    }
    let vars: Vec<Var> = terms.iter().map(|t| t.2).collect();
    let sum = tape.add_all(&vars);
    let mean = tape.scale(sum, 1.0 / vars.len() as f64);
    Ok((mean, terms))
}
