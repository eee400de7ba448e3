//! Task losses on plain vectors, plus the survival risk score.

use crate::error::{Error, Result};
use crate::tape::survival_nll_with_grad;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Discrete-time hazard NLL for one sample whose event or censoring falls in `bin`.
pub fn nll_survival_loss(logits: &[f64], bin: usize, event: bool) -> Result<f64> {
    if bin >= logits.len() {
        return Err(Error::invalid(format!("bin {bin} out of range for {} bins", logits.len())));
    }
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::Numeric("non-finite hazard logits".into()));
    }
    let (loss, _, clamped) = survival_nll_with_grad(logits, bin, event);
    if clamped {
        log::warn!("hazard probability clamped inside the survival log-likelihood");
    }
    Ok(loss)
}

/// Survival probabilities `S_b = prod_{j <= b} (1 - h_j)`.
pub fn survival_curve(logits: &[f64]) -> Vec<f64> {
    let mut s = 1.0;
    logits
        .iter()
        .map(|&l| {
            s *= 1.0 - sigmoid(l);
            s
        })
        .collect()
}

/// Higher means earlier expected event.
pub fn risk_score(logits: &[f64]) -> f64 {
    -survival_curve(logits).iter().sum::<f64>()
}

/// Mean squared error plus `l2` times the squared norm of `weights`.
pub fn ridge_loss(pred: &[f64], target: &[f64], weights: &[&[f64]], l2: f64) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::invalid(format!("length mismatch: {} vs {}", pred.len(), target.len())));
    }
    let mse = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64;
    let reg: f64 = weights.iter().flat_map(|w| w.iter()).map(|w| w * w).sum();
    Ok(mse + l2 * reg)
}

/// Softmax cross-entropy of a logit vector.
pub fn cross_entropy(logits: &[f64], target: usize) -> Result<f64> {
    if target >= logits.len() {
        return Err(Error::invalid(format!("class {target} out of range")));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    Ok(lse - logits[target])
}
