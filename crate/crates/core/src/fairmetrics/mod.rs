//! Fairness and quality metrics.
//!
//! All rates are fractions; percentages appear only when formatting.

mod captions;
mod classification;
mod generation;
mod report;
mod retrieval;

pub use captions::{
    align, caption_gender, composite_rate, count_chunks, max_meteor, meteor, meteor_text, mismatch_rates,
    neutralize_caption, parse_caption_records, read_caption_records, tokenize, Alignment, CaptionRecord, Gender,
    GenderOutcome, MismatchRates, CAPTION_HEADER,
};
pub use classification::{accuracy, delta_dp_mean, dp_multi, records_from, DeltaDp, DpDefinition, MultiDp, PredictionRecord};
pub use generation::{
    discrepancy, discrepancy_by_run, generation_counts, generation_skew, mismatch_by_run, parse_generation_labels,
    read_generation_labels, GenerationCounts, GenerationRecord, GENERATION_HEADER,
};
pub use report::{bootstrap_ci, MetricEntry, MetricReport, DEFAULT_BOOTSTRAP_ITERATIONS};
pub use retrieval::{recall_at_k, skew_at_m, skew_per_prompt, RetrievalRun};
