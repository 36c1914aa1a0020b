//! Offline evaluation of the extraction pipeline: dataset loading, per-field
//! scoring, accuracy reports and paired significance tests.

pub mod dataset;
pub mod report;
pub mod run;
pub mod score;
pub mod stats;
pub mod synth;
