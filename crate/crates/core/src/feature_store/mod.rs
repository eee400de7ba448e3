//! Multi-teacher, multi-scale feature data model.

mod container;
mod import;
mod split;
mod synth;

use std::collections::BTreeMap;

pub use container::{manifest_path, read_feature_set, write_feature_set, FORMAT_VERSION, MAGIC};
pub use import::import_csv_dir;
pub use split::{patient_split, split_units, Fold};
pub use synth::{default_teachers, synth_teacher_set, PlantedMode, ScaleMode, SynthConfig};

use crate::error::{Error, Result};

pub const UNASSIGNED: &str = "unassigned";

/// Block indices `(low, mid, high)` hooked on an encoder with `depth` blocks.
pub fn extraction_depths(depth: i64) -> Result<(usize, usize, usize)> {
    if depth < 1 {
        return Err(Error::invalid(format!("depth must be >= 1, got {depth}")));
    }
    let l = depth as usize;
    let low = ((33 * l) / 100).max(1);
    let mid = ((66 * l) / 100).max(1);
    Ok((low, mid, l))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ScaleLevel {
    Low,
    Mid,
    High,
}

impl ScaleLevel {
    pub const ALL: [ScaleLevel; 3] = [ScaleLevel::Low, ScaleLevel::Mid, ScaleLevel::High];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ScaleLevel::Low => "low",
            ScaleLevel::Mid => "mid",
            ScaleLevel::High => "high",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "low" => Ok(ScaleLevel::Low),
            "mid" => Ok(ScaleLevel::Mid),
            "high" => Ok(ScaleLevel::High),
            other => Err(Error::invalid(format!("unknown scale '{other}'"))),
        }
    }

    /// Parses a comma-separated list such as `low,high` into sorted, unique scales.
    pub fn parse_list(s: &str) -> Result<Vec<ScaleLevel>> {
        let mut out = Vec::new();
        for part in s.split(',').filter(|p| !p.trim().is_empty()) {
            let sc = ScaleLevel::parse(part)?;
            if !out.contains(&sc) {
                out.push(sc);
            }
        }
        if out.is_empty() {
            return Err(Error::invalid("empty scale list"));
        }
        out.sort();
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TeacherSpec {
    pub name: String,
    pub native_dim: usize,
    pub depth: usize,
    pub standalone_score: Option<f64>,
}

impl TeacherSpec {
    pub fn new(name: impl Into<String>, native_dim: usize, depth: usize) -> Result<Self> {
        let name = name.into();
        if name.is_empty() || name.contains(['\n', '=']) {
            return Err(Error::invalid(format!("bad teacher name '{name}'")));
        }
        if native_dim == 0 || depth == 0 {
            return Err(Error::invalid(format!("teacher '{name}' needs native_dim and depth >= 1")));
        }
        Ok(TeacherSpec { name, native_dim, depth, standalone_score: None })
    }

    pub fn depths(&self) -> (usize, usize, usize) {
        extraction_depths(self.depth as i64).expect("depth validated at construction")
    }
}

/// One teacher's LOW/MID/HIGH vectors for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiScaleFeature {
    pub vectors: [Vec<f32>; 3],
}

impl MultiScaleFeature {
    pub fn new(low: Vec<f32>, mid: Vec<f32>, high: Vec<f32>) -> Self {
        MultiScaleFeature { vectors: [low, mid, high] }
    }

    pub fn get(&self, scale: ScaleLevel) -> &[f32] {
        &self.vectors[scale.index()]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TaskKind {
    Tile,
    Expression,
    Survival,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Tile => "tile",
            TaskKind::Expression => "st",
            TaskKind::Survival => "survival",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "tile" => Ok(TaskKind::Tile),
            "st" | "expression" => Ok(TaskKind::Expression),
            "survival" => Ok(TaskKind::Survival),
            other => Err(Error::invalid(format!("unknown task kind '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TaskLabel {
    Class(u32),
    Expression(Vec<f32>),
    Survival { time: f32, event: bool },
}

impl TaskLabel {
    pub fn kind(&self) -> TaskKind {
        match self {
            TaskLabel::Class(_) => TaskKind::Tile,
            TaskLabel::Expression(_) => TaskKind::Expression,
            TaskLabel::Survival { .. } => TaskKind::Survival,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub label: TaskLabel,
    /// One entry per teacher, in teacher order.
    pub features: Vec<MultiScaleFeature>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub task_kind: TaskKind,
    pub seed: u64,
    pub num_classes: usize,
    /// sample_id -> patient_id
    pub patients: BTreeMap<String, String>,
    /// sample_id -> slide_id
    pub slides: BTreeMap<String, String>,
    /// When set, samples sharing a slide id form one bag.
    pub bags: bool,
    pub planted: String,
    pub planted_strengths: Vec<f64>,
    pub provenance: String,
}

impl Manifest {
    pub fn new(task_kind: TaskKind) -> Self {
        Manifest {
            task_kind,
            seed: 0,
            num_classes: 0,
            patients: BTreeMap::new(),
            slides: BTreeMap::new(),
            bags: false,
            planted: "none".into(),
            planted_strengths: Vec::new(),
            provenance: String::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    pub teachers: Vec<TeacherSpec>,
    pub samples: Vec<Sample>,
    pub manifest: Manifest,
}

/// A slide as a group of sample indices sharing one label.
#[derive(Clone, Debug, PartialEq)]
pub struct SlideBag {
    pub slide_id: String,
    pub patient_id: String,
    pub tiles: Vec<usize>,
    pub label: TaskLabel,
}

impl FeatureSet {
    pub fn new(teachers: Vec<TeacherSpec>, samples: Vec<Sample>, manifest: Manifest) -> Result<Self> {
        let fs = FeatureSet { teachers, samples, manifest };
        fs.validate()?;
        Ok(fs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.teachers.is_empty() {
            return Err(Error::invalid("feature set has no teachers"));
        }
        for (i, t) in self.teachers.iter().enumerate() {
            if self.teachers[..i].iter().any(|o| o.name == t.name) {
                return Err(Error::invalid(format!("duplicate teacher name '{}'", t.name)));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for s in &self.samples {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::invalid(format!("duplicate sample id '{}'", s.id)));
            }
            if s.features.len() != self.teachers.len() {
                return Err(Error::invalid(format!(
                    "sample '{}' has {} teacher features, expected {}",
                    s.id,
                    s.features.len(),
                    self.teachers.len()
                )));
            }
            for (t, f) in self.teachers.iter().zip(&s.features) {
                for v in &f.vectors {
                    if v.len() != t.native_dim {
                        return Err(Error::invalid(format!(
                            "sample '{}' teacher '{}': vector length {} != {}",
                            s.id,
                            t.name,
                            v.len(),
                            t.native_dim
                        )));
                    }
                    if v.iter().any(|x| !x.is_finite()) {
                        return Err(Error::invalid(format!("sample '{}' has non-finite features", s.id)));
                    }
                }
            }
            if s.label.kind() != self.manifest.task_kind {
                return Err(Error::invalid(format!("sample '{}' label does not match task kind", s.id)));
            }
            if let TaskLabel::Class(c) = s.label {
                if c as usize >= self.manifest.num_classes {
                    return Err(Error::invalid(format!("sample '{}' class {c} out of range", s.id)));
                }
            }
        }
        Ok(())
    }

    pub fn n_teachers(&self) -> usize {
        self.teachers.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn patient_of(&self, sample: usize) -> &str {
        self.manifest.patients.get(&self.samples[sample].id).map_or(UNASSIGNED, String::as_str)
    }

    pub fn teacher_index(&self, name: &str) -> Option<usize> {
        self.teachers.iter().position(|t| t.name == name)
    }

    /// Training units: one bag per slide in bag mode, otherwise one singleton bag per sample.
    pub fn bags(&self) -> Vec<SlideBag> {
        if !self.manifest.bags {
            return self
                .samples
                .iter()
                .enumerate()
                .map(|(i, s)| SlideBag {
                    slide_id: s.id.clone(),
                    patient_id: self.patient_of(i).to_string(),
                    tiles: vec![i],
                    label: s.label.clone(),
                })
                .collect();
        }
        let mut order: Vec<String> = Vec::new();
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, s) in self.samples.iter().enumerate() {
            let slide = self.manifest.slides.get(&s.id).cloned().unwrap_or_else(|| s.id.clone());
            let e = groups.entry(slide.clone()).or_default();
            if e.is_empty() {
                order.push(slide);
            }
            e.push(i);
        }
        order
            .into_iter()
            .map(|slide| {
                let tiles = groups.remove(&slide).unwrap_or_default();
                let first = tiles[0];
                SlideBag {
                    slide_id: slide,
                    patient_id: self.patient_of(first).to_string(),
                    label: self.samples[first].label.clone(),
                    tiles,
                }
            })
            .collect()
    }

    /// Restricts the set to the given teachers, in the given order.
    pub fn select_teachers(&self, keep: &[usize]) -> Result<FeatureSet> {
        if keep.is_empty() {
            return Err(Error::invalid("at least one teacher must remain"));
        }
        if keep.iter().any(|&k| k >= self.teachers.len()) {
            return Err(Error::invalid("teacher index out of range"));
        }
        let mut manifest = self.manifest.clone();
        if !manifest.planted_strengths.is_empty() {
            manifest.planted_strengths = keep.iter().map(|&k| self.manifest.planted_strengths[k]).collect();
        }
        Ok(FeatureSet {
            teachers: keep.iter().map(|&k| self.teachers[k].clone()).collect(),
            samples: self
                .samples
                .iter()
                .map(|s| Sample {
                    id: s.id.clone(),
                    label: s.label.clone(),
                    features: keep.iter().map(|&k| s.features[k].clone()).collect(),
                })
                .collect(),
            manifest,
        })
    }

    /// SHA-256 over every feature value, in container order.
    pub fn feature_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for s in &self.samples {
            for f in &s.features {
                for v in &f.vectors {
                    for x in v {
                        h.update(x.to_le_bytes());
                    }
                }
            }
        }
        hex::encode(h.finalize())
    }
}
