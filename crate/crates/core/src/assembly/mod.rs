//! Synthetic feature profiles, end-to-end model assembly and a toy trainer.
//!
//! Real image and question encoders are replaced by standard-normal tensors
//! with the shapes of the usual backbones; see [`FeatureProfile::catalog`].

mod model;
mod profile;
mod train;

pub use model::{argmax_rows, AttentionMode, ModelCache, ModelSpec, VqaModel};
pub use profile::{synth_batch, FeatureKind, FeatureProfile, SyntheticBatch, D_Q};
pub use train::{
    softmax_cross_entropy, toy_hyper, toy_profile, toy_trace, train_toy, TOY_ANSWERS, TOY_BATCH, TOY_LR, TOY_STEPS,
};

/// Answer-set size for VQAv2 and VQA-CP v2 models.
pub const ANSWERS_VQA: usize = 3000;
/// Answer-set size for TDIUC models.
pub const ANSWERS_TDIUC: usize = 1460;
