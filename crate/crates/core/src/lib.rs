//! Debiasing toolkit for frozen vision-language embeddings.
//!
//! The crate is organised around the pipeline it supports:
//!
//! * [`embstore`] reads and writes embedding matrices (`EMB1`) and attribute tables.
//! * [`forest`] is a Gini random forest used both to rank bias-carrying
//!   dimensions and to score per-sample confidence.
//! * [`sfid`] selects the top-k important dimensions and imputes them with the
//!   mean of low-confidence (or high-confidence) validation samples.
//! * [`baselines`] holds the mutual-information pruning and additive-residual
//!   adversarial debiasers used for comparison.
//! * [`fairmetrics`] implements the fairness and quality metrics.
//! * [`synthlab`] generates embeddings with planted bias and known ground truth.
//! * [`tasks`] runs zero-shot classification and text-to-image retrieval.

pub mod baselines;
pub mod embstore;
pub mod error;
pub mod fairmetrics;
pub mod forest;
pub mod seed;
pub mod sfid;
pub mod synthlab;
pub mod tasks;

pub use embstore::{AttributeTable, EmbeddingMatrix, EmbeddingTensor, TensorLayout};
pub use error::{Error, Result};
pub use forest::{ForestModel, ForestParams};
pub use sfid::{DebiasModel, ImputeMode, SfidMode, SfidParams};
