//! Linear probes that predict whether a chain-of-thought will end in a correct
//! answer, from hidden states pooled after the first `t` reasoning tokens.
//!
//! The pipeline per checkpoint is: survival filter → stratified split → PCA on
//! the training fold → standardized ℓ2 logistic regression → held-out metrics.
//! [`synth`] generates packs with a planted signal and a closed-form Bayes AUC,
//! which is what the test suite checks the pipeline against.

pub mod linalg_pca;
pub mod metrics;
pub mod probe;
pub mod trace_store;
pub mod synth;
pub mod analysis;
pub mod earlyexit;
pub mod report;
pub mod cli;
