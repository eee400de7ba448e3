//! Projection into a shared space, per-scale expert gating, the
//! self-attention student and per-scale pooled embeddings.

use crate::error::{Error, Result};
use crate::feature_store::{MultiScaleFeature, ScaleLevel};
use crate::nn::{LayerNorm, Linear, ParamStore};
use crate::tape::{Mat, Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct FusionConfig {
    pub teacher_names: Vec<String>,
    pub native_dims: Vec<usize>,
    pub d: usize,
    pub heads: usize,
    pub layers: usize,
    pub gate_hidden: usize,
    pub moe: bool,
    pub scales: Vec<ScaleLevel>,
    pub seed: u64,
}

impl FusionConfig {
    pub fn new(native_dims: Vec<usize>, d: usize, seed: u64) -> Self {
        let n = native_dims.len();
        FusionConfig {
            teacher_names: (0..n).map(|i| format!("t{i}")).collect(),
            native_dims,
            d,
            heads: 4,
            layers: 4,
            gate_hidden: 4 * n,
            moe: true,
            scales: ScaleLevel::ALL.to_vec(),
            seed,
        }
    }

    pub fn n_teachers(&self) -> usize {
        self.native_dims.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.native_dims.is_empty() || self.native_dims.contains(&0) {
            return Err(Error::invalid("fusion needs at least one teacher with a positive width"));
        }
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return Err(Error::invalid(format!("d={} must be a positive multiple of heads={}", self.d, self.heads)));
        }
        if self.teacher_names.len() != self.native_dims.len() {
            return Err(Error::invalid("one teacher name per native width is required"));
        }
        if self.gate_hidden == 0 {
            return Err(Error::invalid("gate_hidden must be >= 1"));
        }
        if self.scales.is_empty() {
            return Err(Error::invalid("at least one scale must be active"));
        }
        Ok(())
    }

    pub fn is_active(&self, s: ScaleLevel) -> bool {
        self.scales.contains(&s)
    }
}

/// One affine map per (teacher, active scale) into the shared width `d`.
#[derive(Clone, Debug)]
pub struct ProjectionBank {
    maps: Vec<[Option<Linear>; 3]>,
}

impl ProjectionBank {
    pub fn get(&self, teacher: usize, scale: ScaleLevel) -> Result<&Linear> {
        self.maps
            .get(teacher)
            .and_then(|m| m[scale.index()].as_ref())
            .ok_or_else(|| Error::invalid(format!("no projection for teacher {teacher} at scale {}", scale.name())))
    }
}

/// MLP `N·d -> hidden -> N` followed by a softmax.
#[derive(Clone, Debug)]
pub struct GatingNetwork {
    pub l1: Linear,
    pub l2: Linear,
}

impl GatingNetwork {
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, f_concat: Var) -> Result<Var> {
        if !tape.value(f_concat).is_finite() {
            return Err(Error::Numeric("gating input is not finite".into()));
        }
        let h = self.l1.forward(tape, store, f_concat);
        let h = tape.gelu(h);
        let logits = self.l2.forward(tape, store, h);
        Ok(tape.softmax_rows(logits))
    }
}

#[derive(Clone, Debug)]
pub struct AttentionBlock {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
}

/// Self-attention blocks over the teacher axis, then a layer norm.
#[derive(Clone, Debug)]
pub struct StudentStack {
    pub blocks: Vec<AttentionBlock>,
    pub norm: LayerNorm,
    pub heads: usize,
}

impl StudentStack {
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, fused: Var) -> Result<Var> {
        if !tape.value(fused).is_finite() {
            return Err(Error::Numeric("attention input is not finite".into()));
        }
        let d = tape.value(fused).cols;
        let hd = d / self.heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let mut x = fused;
        for (layer, b) in self.blocks.iter().enumerate() {
            let q = b.wq.forward(tape, store, x);
            let k = b.wk.forward(tape, store, x);
            let v = b.wv.forward(tape, store, x);
            let mut outs = Vec::with_capacity(self.heads);
            for h in 0..self.heads {
                let qh = tape.slice_cols(q, h * hd, hd);
                let kh = tape.slice_cols(k, h * hd, hd);
                let vh = tape.slice_cols(v, h * hd, hd);
                let kt = tape.transpose(kh);
                let s = tape.matmul(qh, kt);
                let s = tape.scale(s, scale);
                let a = tape.softmax_rows(s);
                outs.push(tape.matmul(a, vh));
            }
            let o = tape.concat_cols(&outs);
            let o = b.wo.forward(tape, store, o);
            x = tape.add(x, o);
            if !tape.value(x).is_finite() {
                return Err(Error::Numeric(format!("attention layer {layer} produced non-finite values")));
            }
        }
        let out = self.norm.forward(tape, store, x);
        if !tape.value(out).is_finite() {
            return Err(Error::Numeric("final layer norm produced non-finite values".into()));
        }
        Ok(out)
    }
}

#[derive(Clone, Debug)]
pub struct FusionModel {
    pub cfg: FusionConfig,
    pub projections: ProjectionBank,
    pub gates: [Option<GatingNetwork>; 3],
    pub stack: StudentStack,
}

/// Everything one scale produces during a forward pass.
#[derive(Clone, Debug)]
pub struct ScaleOutput {
    pub scale: ScaleLevel,
    pub projected: Vec<Var>,
    pub gate: Var,
    pub fused: Var,
    pub final_rows: Var,
    pub z: Var,
}

#[derive(Clone, Debug)]
pub struct FusionOutput {
    pub scales: Vec<ScaleOutput>,
    /// Concatenation of `z` over the active scales.
    pub task_input: Var,
}

impl FusionModel {
    pub fn new(store: &mut ParamStore, cfg: FusionConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.n_teachers();
        let seed = cfg.seed;
        let maps = cfg
            .native_dims
            .iter()
            .enumerate()
            .map(|(i, &dim)| {
                std::array::from_fn(|s| {
                    let sc = ScaleLevel::ALL[s];
                    cfg.is_active(sc)
                        .then(|| Linear::new(store, &format!("proj.{i}.{}", sc.name()), dim, cfg.d, seed))
                })
            })
            .collect();
        let gates = std::array::from_fn(|s| {
            let sc = ScaleLevel::ALL[s];
            cfg.is_active(sc).then(|| GatingNetwork {
                l1: Linear::new(store, &format!("gate.{}.l1", sc.name()), n * cfg.d, cfg.gate_hidden, seed),
                l2: Linear::new(store, &format!("gate.{}.l2", sc.name()), cfg.gate_hidden, n, seed),
            })
        });
        let blocks = (0..cfg.layers)
            .map(|l| AttentionBlock {
                wq: Linear::new(store, &format!("attn.{l}.q"), cfg.d, cfg.d, seed),
                wk: Linear::new(store, &format!("attn.{l}.k"), cfg.d, cfg.d, seed),
                wv: Linear::new(store, &format!("attn.{l}.v"), cfg.d, cfg.d, seed),
                wo: Linear::new(store, &format!("attn.{l}.o"), cfg.d, cfg.d, seed),
            })
            .collect();
        let norm = LayerNorm::new(store, "attn.norm", cfg.d);
        let stack = StudentStack { blocks, norm, heads: cfg.heads };
        Ok(FusionModel { projections: ProjectionBank { maps }, gates, stack, cfg })
    }

    pub fn task_input_dim(&self) -> usize {
        self.cfg.d * self.cfg.scales.len()
    }

    pub fn gate_network(&self, scale: ScaleLevel) -> Result<&GatingNetwork> {
        self.gates[scale.index()]
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("scale {} is not active", scale.name())))
    }

    /// Projects `x` (rows of teacher-native vectors) into the shared space.
    pub fn project(&self, tape: &mut Tape, store: &ParamStore, teacher: usize, scale: ScaleLevel, x: Var) -> Result<Var> {
        let map = self.projections.get(teacher, scale)?;
        if tape.value(x).cols != map.in_dim {
            return Err(Error::invalid(format!(
                "teacher {teacher} expects width {}, got {}",
                map.in_dim,
                tape.value(x).cols
            )));
        }
        Ok(map.forward(tape, store, x))
    }

    /// Projects each teacher's vector and concatenates the results in teacher order.
    pub fn project_and_concat(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        inputs: &[Var],
        scale: ScaleLevel,
    ) -> Result<(Vec<Var>, Var)> {
        if inputs.len() != self.cfg.n_teachers() {
            return Err(Error::invalid(format!("expected {} teacher inputs, got {}", self.cfg.n_teachers(), inputs.len())));
        }
        let projected = inputs
            .iter()
            .enumerate()
            .map(|(i, &x)| self.project(tape, store, i, scale, x))
            .collect::<Result<Vec<_>>>()?;
        let concat = tape.concat_cols(&projected);
        Ok((projected, concat))
    }

    /// Like [`Self::project_and_concat`] but checks that inputs arrive in the
    /// model's teacher order.
    pub fn project_and_concat_named(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        inputs: &[(&str, Var)],
        scale: ScaleLevel,
    ) -> Result<(Vec<Var>, Var)> {
        let given: Vec<&str> = inputs.iter().map(|(n, _)| *n).collect();
        if given != self.cfg.teacher_names.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(Error::invalid(format!(
                "teacher order {given:?} does not match {:?}",
                self.cfg.teacher_names
            )));
        }
        let vars: Vec<Var> = inputs.iter().map(|(_, v)| *v).collect();
        self.project_and_concat(tape, store, &vars, scale)
    }

    /// Gate weights (`1 x N`) for one scale; uniform when experts are disabled.
    pub fn gate(&self, tape: &mut Tape, store: &ParamStore, scale: ScaleLevel, f_concat: Var) -> Result<Var> {
        let n = self.cfg.n_teachers();
        if !self.cfg.moe {
            if !tape.value(f_concat).is_finite() {
                return Err(Error::Numeric("gating input is not finite".into()));
            }
            return Ok(tape.constant(Mat::from_vec(1, n, vec![1.0 / n as f64; n])));
        }
        self.gate_network(scale)?.forward(tape, store, f_concat)
    }

    /// Runs gating, fusion, attention and pooling on already projected vectors.
    pub fn fuse_projected(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        scale: ScaleLevel,
        projected: Vec<Var>,
    ) -> Result<ScaleOutput> {
        let concat = tape.concat_cols(&projected);
        let gate = self.gate(tape, store, scale, concat)?;
        let fused = fuse(tape, gate, &projected)?;
        let final_rows = self.stack.forward(tape, store, fused)?;
        let z = tape.mean_rows(final_rows);
        Ok(ScaleOutput { scale, projected, gate, fused, final_rows, z })
    }

    /// Full forward pass for one tile given each teacher's multi-scale features.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, features: &[&MultiScaleFeature]) -> Result<FusionOutput> {
        if features.len() != self.cfg.n_teachers() {
            return Err(Error::invalid(format!(
                "expected {} teachers, got {}",
                self.cfg.n_teachers(),
                features.len()
            )));
        }
        let mut scales = Vec::with_capacity(self.cfg.scales.len());
        for &s in &self.cfg.scales {
            let inputs: Vec<Var> = features.iter().map(|f| tape.constant(to_row(f.get(s)))).collect();
            let (projected, _) = self.project_and_concat(tape, store, &inputs, s)?;
            scales.push(self.fuse_projected(tape, store, s, projected)?);
        }
        let task_input = student_embed(tape, &scales)?;
        Ok(FusionOutput { scales, task_input })
    }
}

pub(crate) fn to_row(v: &[f32]) -> Mat {
    Mat::row_vector(v.iter().map(|&x| f64::from(x)).collect())
}

/// Stacks `g_i * projected_i` into the `N x d` fused matrix.
pub fn fuse(tape: &mut Tape, gate: Var, projected: &[Var]) -> Result<Var> {
    let g = tape.value(gate);
    if g.rows != 1 || g.cols != projected.len() {
        return Err(Error::invalid(format!("gate has {} entries for {} experts", g.len(), projected.len())));
    }
    let stacked = tape.concat_rows(projected);
    let gcol = tape.transpose(gate);
    Ok(tape.mul_col(stacked, gcol))
}

/// Concatenates per-scale embeddings in scale order.
pub fn student_embed(tape: &mut Tape, scales: &[ScaleOutput]) -> Result<Var> {
    if scales.is_empty() {
        return Err(Error::invalid("no scale outputs to embed"));
    }
    let zs: Vec<Var> = scales.iter().map(|s| s.z).collect();
    Ok(tape.concat_cols(&zs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(n: usize, d: usize) -> (ParamStore, FusionModel) {
        let mut store = ParamStore::new();
        let mut cfg = FusionConfig::new(vec![5; n], d, 9);
        cfg.layers = 2;
        let m = FusionModel::new(&mut store, cfg).unwrap();
        (store, m)
    }

    #[test]
    fn d_must_divide_heads() {
        let mut store = ParamStore::new();
        assert!(FusionModel::new(&mut store, FusionConfig::new(vec![3], 6, 0)).is_err());
    }

    #[test]
    fn one_hot_gate_keeps_selected_row() {
        let mut t = Tape::new();
        let rows: Vec<Var> = (0..3).map(|i| t.constant(Mat::row_vector(vec![i as f64 + 1.0; 4]))).collect();
        let g = t.constant(Mat::row_vector(vec![0.0, 0.0, 1.0]));
        let f = fuse(&mut t, g, &rows).unwrap();
        let v = t.value(f);
        assert!(v.row(0).iter().chain(v.row(1)).all(|x| *x == 0.0));
        assert_eq!(v.row(2), &[3.0; 4]);
    }

    #[test]
    fn gate_length_mismatch_is_rejected() {
        let mut t = Tape::new();
        let rows: Vec<Var> = (0..2).map(|_| t.constant(Mat::row_vector(vec![1.0; 4]))).collect();
        let g = t.constant(Mat::row_vector(vec![0.5; 3]));
        assert!(fuse(&mut t, g, &rows).is_err());
    }

    #[test]
    fn wrong_teacher_count_is_rejected() {
        let (store, m) = model(3, 8);
        let mut t = Tape::new();
        let x: Vec<Var> = (0..2).map(|_| t.constant(Mat::row_vector(vec![1.0; 5]))).collect();
        assert!(m.project_and_concat(&mut t, &store, &x, ScaleLevel::Low).is_err());
    }

    #[test]
    fn non_finite_gate_input_is_numeric_error() {
        let (store, m) = model(2, 8);
        let mut t = Tape::new();
        let x = t.constant(Mat::row_vector(vec![f64::NAN; 16]));
        assert!(matches!(m.gate(&mut t, &store, ScaleLevel::Mid, x), Err(Error::Numeric(_))));
    }
}
