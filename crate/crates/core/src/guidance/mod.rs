//! The describable-window classifier.
//!
//! A window's frames (and, in query-dependent mode, the query tokens) are
//! projected to a common width, tagged with positional embeddings, prefixed
//! with a learnable CLS row and run through a post-norm transformer encoder.
//! The CLS output feeds a two-layer head whose sigmoid is the window score.

mod config;
mod io;
mod model;
mod train;

pub use config::{GuidanceConfig, GuidanceMode, ModalityMask, TrainConfig};
pub use crate::dataset::{FeatureCache, WindowInputs};
pub use io::MODEL_MAGIC;
pub use model::{
    bce_loss, bce_with_logits, expected_parameter_count, probability, sigmoid, sinusoidal_table,
    EncoderLayer, ForwardCache, GuidanceModel, Modality, PassCounter, Projection, PROB_EPS,
};
pub use train::{
    auroc, guidance_windows, labeled_windows, score_labeled, score_windows, train_guidance,
    TrainOutcome, GRAD_CHUNKS,
};
