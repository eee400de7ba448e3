//! Multi-teacher feature fusion: gated mixture-of-experts over frozen encoder
//! features, a self-attention student, online distillation, attention-based
//! MIL pooling, task heads and the evaluation statistics around them.

pub mod ablation;
pub mod distill;
pub mod error;
pub mod feature_store;
pub mod fusion;
pub mod metrics;
pub mod mil;
pub mod nn;
pub mod report;
pub mod tape;
pub mod tasks;

pub use error::{Error, Result};
pub use feature_store::{
    extraction_depths, patient_split, read_feature_set, synth_teacher_set, write_feature_set, FeatureSet,
    MultiScaleFeature, ScaleLevel, SynthConfig, TaskKind, TaskLabel, TeacherSpec,
};
pub use tape::{Mat, Tape, Var};
