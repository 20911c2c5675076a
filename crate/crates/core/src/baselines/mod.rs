//! Comparison debiasers: per-feature mutual-information pruning and a
//! learned additive residual trained against a frozen attribute classifier.

mod dear;
mod mi;

pub use dear::{apply_dear, fit_dear, DearObjective, DearParams, LinearMap, ResidualModel, TrainLog};
pub use mi::{equal_frequency_bins, fit_clipclip, mutual_info_features, ClipClipParams};
