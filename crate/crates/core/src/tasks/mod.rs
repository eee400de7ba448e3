//! Task heads, losses, preprocessing, optimisation and the training loop.

pub mod checkpoint;
pub mod heads;
pub mod loss;
pub mod model;
pub mod optim;
pub mod preprocess;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use heads::{HeadConfig, TaskHead};
pub use loss::{cross_entropy, nll_survival_loss, ridge_loss, risk_score, survival_curve};
pub use model::{BackboneConfig, ModelConfig, ShazamModel, Target};
pub use optim::{cosine_lr, decoupled_weight_update, AdamW, MomentState, ReduceOnPlateau};
pub use preprocess::{filter_cohort, log_normalize_expression, survival_bins, SurvivalBins};
pub use train::{
    build_units, cross_validate, fusion_model_config, predict, prepare_expression, probe_model_config, rebin, score, train,
    ArchOptions, CvResult, EvalMetrics, Predictions, Schedule, TrainConfig, TrainReport, Unit,
};
