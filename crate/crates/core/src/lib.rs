//! Field-wise learning for multi-field categorical data.
//!
//! Each field gets a low-rank linear model over the one-hot features of all
//! other fields, and the decision score is the sum over fields. Training
//! minimizes Logloss plus a variance and mean-norm penalty with Adagrad; the
//! analysis tools report the resulting Rademacher bound and per-field importance.

// `!(x > 0.0)` is used on purpose so NaN fails validation too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod commands;
pub mod config;
pub mod error;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use ingest::{Dataset, EncodedInstance, FieldKind, FieldSpec, Label, Vocabulary};
pub use metrics::{auc, evaluate, EvalReport};
pub use model::{predict_proba, FieldBlock, FieldNorms, FieldWiseModel, RankPolicy};
pub use train::{train, TrainConfig, TrainHistory, Trainer};
