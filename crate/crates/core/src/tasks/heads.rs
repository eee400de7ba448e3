//! Task heads on top of the student embedding.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::feature_store::TaskKind;
use crate::nn::{LayerNorm, Linear, ParamId, ParamStore};
use crate::tape::{Mat, Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct HeadConfig {
    pub task: TaskKind,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    /// Number of classes, genes or survival bins.
    pub output: usize,
}

impl HeadConfig {
    pub fn tile(num_classes: usize) -> Self {
        HeadConfig { task: TaskKind::Tile, hidden: vec![128, 64], dropout: 0.0, output: num_classes }
    }

    pub fn expression(num_genes: usize) -> Self {
        HeadConfig { task: TaskKind::Expression, hidden: vec![128], dropout: 0.1, output: num_genes }
    }

    pub fn survival(num_bins: usize) -> Self {
        HeadConfig { task: TaskKind::Survival, hidden: vec![64], dropout: 0.0, output: num_bins }
    }

    pub fn validate(&self) -> Result<()> {
        if self.output == 0 {
            return Err(Error::invalid("head output width must be >= 1"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::invalid("hidden widths must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Tile: `(Linear, LayerNorm, GELU)*` then Linear. Expression:
/// `(Linear, GELU, dropout)*` then Linear. Survival: `(Linear, GELU)*` then Linear.
#[derive(Clone, Debug)]
pub struct TaskHead {
    pub cfg: HeadConfig,
    pub layers: Vec<Linear>,
    pub norms: Vec<LayerNorm>,
}

impl TaskHead {
    pub fn new(store: &mut ParamStore, cfg: HeadConfig, in_dim: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut layers = Vec::new();
        let mut norms = Vec::new();
        let mut prev = in_dim;
        for (i, &h) in cfg.hidden.iter().enumerate() {
            layers.push(Linear::new(store, &format!("head.{i}"), prev, h, seed));
            if cfg.task == TaskKind::Tile {
                norms.push(LayerNorm::new(store, &format!("head.{i}.norm"), h));
            }
            prev = h;
        }
        layers.push(Linear::new(store, &format!("head.{}", cfg.hidden.len()), prev, cfg.output, seed));
        Ok(TaskHead { cfg, layers, norms })
    }

    /// Weight matrices (biases excluded) penalised by the ridge term.
    pub fn weight_ids(&self) -> Vec<ParamId> {
        self.layers.iter().map(|l| l.weight).collect()
    }

    /// `dropout_rng` is `Some` only while training.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, mut dropout_rng: Option<&mut ChaCha8Rng>) -> Var {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, store, h);
            if i == last {
                break;
            }
            if self.cfg.task == TaskKind::Tile {
                h = self.norms[i].forward(tape, store, h);
            }
            h = tape.gelu(h);
            if self.cfg.task == TaskKind::Expression && self.cfg.dropout > 0.0 {
                if let Some(rng) = dropout_rng.as_deref_mut() {
                    let p = self.cfg.dropout;
                    let (r, c) = tape.value(h).shape();
                    let mask: Vec<f64> =
                        (0..r * c).map(|_| if rng.random::<f64>() < p { 0.0 } else { 1.0 / (1.0 - p) }).collect();
                    let m = tape.constant(Mat::from_vec(r, c, mask));
                    h = tape.mul(h, m);
                }
            }
        }
        h
    }
}
