//! AdamW with decoupled weight decay and the learning-rate schedules.

use crate::error::{Error, Result};
use crate::tape::Mat;

#[derive(Clone, Debug, PartialEq)]
pub struct MomentState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl MomentState {
    pub fn new(len: usize) -> Self {
        MomentState { m: vec![0.0; len], v: vec![0.0; len], t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// `param -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * param)`.
pub fn decoupled_weight_update(param: &mut [f64], grad: &[f64], lr: f64, wd: f64, st: &mut MomentState) -> Result<()> {
    if param.len() != grad.len() || param.len() != st.m.len() {
        return Err(Error::invalid(format!(
            "shape mismatch: param {}, grad {}, state {}",
            param.len(),
            grad.len(),
            st.m.len()
        )));
    }
    st.t += 1;
    let bc1 = 1.0 - st.beta1.powi(st.t as i32);
    let bc2 = 1.0 - st.beta2.powi(st.t as i32);
    for i in 0..param.len() {
        st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * grad[i];
        st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * grad[i] * grad[i];
        let m_hat = st.m[i] / bc1;
        let v_hat = st.v[i] / bc2;
        param[i] -= lr * (m_hat / (v_hat.sqrt() + st.eps) + wd * param[i]);
    }
    Ok(())
}

/// One moment state per parameter matrix.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub weight_decay: f64,
    states: Vec<MomentState>,
}

impl AdamW {
    pub fn new(params: &[Mat], weight_decay: f64) -> Self {
        AdamW { weight_decay, states: params.iter().map(|p| MomentState::new(p.len())).collect() }
    }

    pub fn step(&mut self, params: &mut [Mat], grads: &[Mat], lr: f64) -> Result<()> {
        if params.len() != self.states.len() || grads.len() != params.len() {
            return Err(Error::invalid("optimizer state does not match parameter list"));
        }
        for ((p, g), st) in params.iter_mut().zip(grads).zip(&mut self.states) {
            decoupled_weight_update(&mut p.data, &g.data, lr, self.weight_decay, st)?;
        }
        Ok(())
    }
}

/// Cosine decay from `lr_max` at step 0 to `lr_min` at `total_steps`.
pub fn cosine_lr(step: usize, total_steps: usize, lr_max: f64, lr_min: f64) -> Result<f64> {
    if step > total_steps {
        return Err(Error::invalid(format!("step {step} beyond total {total_steps}")));
    }
    if total_steps == 0 {
        return Ok(lr_max);
    }
    let frac = step as f64 / total_steps as f64;
    Ok(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * frac).cos()))
}

/// Halves (by default) the learning rate after `patience` epochs without
/// improvement of the monitored loss.
#[derive(Clone, Debug, PartialEq)]
pub struct ReduceOnPlateau {
    pub factor: f64,
    pub patience: usize,
    pub lr: f64,
    best: f64,
    stale: usize,
}

impl ReduceOnPlateau {
    pub fn new(lr: f64, factor: f64, patience: usize) -> Self {
        ReduceOnPlateau { factor, patience, lr, best: f64::INFINITY, stale: 0 }
    }

    pub fn observe(&mut self, loss: f64) -> f64 {
        if loss < self.best - 1e-12 * self.best.abs().max(1.0) {
            self.best = loss;
            self.stale = 0;
        } else {
            self.stale += 1;
            if self.stale > self.patience {
                self.lr *= self.factor;
                self.stale = 0;
            }
        }
        self.lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_no_decay_keeps_param() {
        let mut p = vec![1.5, -2.0];
        let mut st = MomentState::new(2);
        decoupled_weight_update(&mut p, &[0.0, 0.0], 0.1, 0.0, &mut st).unwrap();
        assert_eq!(p, vec![1.5, -2.0]);
    }

    #[test]
    fn zero_grad_with_decay_shrinks() {
        let mut p = vec![2.0];
        let mut st = MomentState::new(1);
        decoupled_weight_update(&mut p, &[0.0], 0.1, 0.01, &mut st).unwrap();
        assert!((p[0] - 2.0 * (1.0 - 0.1 * 0.01)).abs() < 1e-15);
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0, 10, 1e-3, 1e-5).unwrap(), 1e-3);
        assert!((cosine_lr(10, 10, 1e-3, 1e-5).unwrap() - 1e-5).abs() < 1e-18);
        assert!((cosine_lr(5, 10, 1e-3, 1e-5).unwrap() - (1e-3 + 1e-5) / 2.0).abs() < 1e-15);
        assert!(cosine_lr(11, 10, 1e-3, 0.0).is_err());
    }

    #[test]
    fn plateau_halves_after_patience() {
        let mut s = ReduceOnPlateau::new(1.0, 0.5, 2);
        s.observe(1.0);
        s.observe(1.0);
        s.observe(1.0);
        assert_eq!(s.observe(1.0), 0.5);
    }
}
