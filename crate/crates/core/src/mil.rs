//! Gated attention pooling of tile bags into slide vectors.

use crate::error::{Error, Result};
use crate::feature_store::{MultiScaleFeature, ScaleLevel};
use crate::fusion::{FusionModel, FusionOutput};
use crate::nn::{Linear, ParamStore};
use crate::tape::{Mat, Tape, Var};

pub const DEFAULT_HIDDEN: usize = 128;

/// `score(h) = w^T (tanh(V h) * sigmoid(U h))`, softmax over the bag.
#[derive(Clone, Debug)]
pub struct AbmilHead {
    pub v: Linear,
    pub u: Linear,
    pub w: Linear,
}

impl AbmilHead {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, hidden: usize, seed: u64) -> Self {
        AbmilHead {
            v: Linear::new(store, &format!("{name}.v"), d, hidden, seed),
            u: Linear::new(store, &format!("{name}.u"), d, hidden, seed),
            w: Linear::new(store, &format!("{name}.w"), hidden, 1, seed),
        }
    }

    /// One unnormalised score per row of `bag`, as an `n x 1` column.
    pub fn scores(&self, tape: &mut Tape, store: &ParamStore, bag: Var) -> Var {
        let a = self.v.forward(tape, store, bag);
        let a = tape.tanh(a);
        let b = self.u.forward(tape, store, bag);
        let b = tape.sigmoid(b);
        let gated = tape.mul(a, b);
        self.w.forward(tape, store, gated)
    }
}

/// Pools an `n x d` bag into a `1 x d` vector. Returns the vector and the
/// `1 x n` attention weights.
pub fn abmil_pool(tape: &mut Tape, store: &ParamStore, head: &AbmilHead, bag: Var) -> Result<(Var, Var)> {
    let m = tape.value(bag);
    if m.rows == 0 {
        return Err(Error::invalid("cannot pool an empty bag"));
    }
    if !m.is_finite() {
        return Err(Error::Numeric("bag contains non-finite values".into()));
    }
    let s = head.scores(tape, store, bag);
    let s = tape.transpose(s);
    let weights = tape.softmax_rows(s);
    let pooled = tape.matmul(weights, bag);
    Ok((pooled, weights))
}

/// One head per active scale, shared by every teacher at that scale.
#[derive(Clone, Debug)]
pub struct MilHeads {
    pub heads: [Option<AbmilHead>; 3],
}

impl MilHeads {
    pub fn new(store: &mut ParamStore, scales: &[ScaleLevel], d: usize, hidden: usize, seed: u64) -> Self {
        MilHeads {
            heads: std::array::from_fn(|s| {
                let sc = ScaleLevel::ALL[s];
                scales.contains(&sc).then(|| AbmilHead::new(store, &format!("mil.{}", sc.name()), d, hidden, seed))
            }),
        }
    }

    pub fn get(&self, scale: ScaleLevel) -> Result<&AbmilHead> {
        self.heads[scale.index()]
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("no MIL head for scale {}", scale.name())))
    }
}

/// Attention weights of one (scale, teacher) pooling.
#[derive(Clone, Debug)]
pub struct BagAttention {
    pub scale: ScaleLevel,
    pub teacher: usize,
    pub weights: Vec<f64>,
}

/// Pools every teacher's projected tiles per scale, then fuses the slide vectors.
///
/// `tiles[j][i]` holds teacher `i`'s features for tile `j`.
pub fn aggregate_slide(
    tape: &mut Tape,
    store: &ParamStore,
    fusion: &FusionModel,
    heads: &MilHeads,
    tiles: &[Vec<&MultiScaleFeature>],
) -> Result<(FusionOutput, Vec<BagAttention>)> {
    if tiles.is_empty() {
        return Err(Error::invalid("slide bag has no tiles"));
    }
    let n_t = fusion.cfg.n_teachers();
    if tiles.iter().any(|t| t.len() != n_t) {
        return Err(Error::invalid("every tile needs one feature group per teacher"));
    }
    let mut outputs = Vec::new();
    let mut attention = Vec::new();
    for &s in &fusion.cfg.scales {
        let head = heads.get(s)?;
        let mut pooled = Vec::with_capacity(n_t);
        for i in 0..n_t {
            let rows: Vec<Vec<f64>> =
                tiles.iter().map(|t| t[i].get(s).iter().map(|&x| f64::from(x)).collect()).collect();
            let h = tape.constant(Mat::from_rows(&rows));
            let p = fusion.project(tape, store, i, s, h)?;
            let (v, w) = abmil_pool(tape, store, head, p)?;
            attention.push(BagAttention { scale: s, teacher: i, weights: tape.value(w).data.clone() });
            pooled.push(v);
        }
        outputs.push(fusion.fuse_projected(tape, store, s, pooled)?);
    }
    let task_input = crate::fusion::student_embed(tape, &outputs)?;
    Ok((FusionOutput { scales: outputs, task_input }, attention))
}

/// CSV rows `tile_id,scale,teacher,weight` for one slide.
pub fn attention_csv(tile_ids: &[String], teacher_names: &[String], att: &[BagAttention]) -> String {
    let mut out = String::from("tile_id,scale,teacher,weight\n");
    for a in att {
        for (id, w) in tile_ids.iter().zip(&a.weights) {
            out.push_str(&format!("{id},{},{},{w}\n", a.scale.name(), teacher_names[a.teacher]));
        }
    }
    out
}
