//! Linear probing of a frozen encoder and the downstream metrics.
//!
//! Features are the encoder outputs for every `(channel, time)` patch of the
//! unmasked sample. The head maps each patch vector to a small width, then
//! maps the flattened result to class logits.

mod head;
mod metrics;

pub use head::{
    extract_features, extract_many, predict, run_probe, stratified_split, train_probe, ProbeConfig,
    ProbeFit, ProbeHead, ProbeOutcome,
};
pub use metrics::{
    auroc, balanced_accuracy, cohen_kappa, confusion_matrix, metrics, weighted_f1, MetricReport,
};
