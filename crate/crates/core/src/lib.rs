//! Build a context-preserving word trie (CP-Trie) from a sentence corpus and
//! use it as empirical data support to score truncation samplers (top-k,
//! top-p, eta, mirostat, adaptive) with probability-independent Recall and
//! Risk, calibrated to a fixed average Risk.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which is what the command-line tool uses.

// Negated comparisons below are NaN-aware on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibrate;
pub mod config;
pub mod dist;
pub mod ingest;
pub mod metrics;
pub mod report;
pub mod samplers;
pub mod scalar;
pub mod trie;

pub use scalar::Scalar;

pub type DistributionRecord = dist::DistributionRecord<f64>;
pub type DistributionRecordF32 = dist::DistributionRecord<f32>;
pub type TokenEntry = dist::TokenEntry<f64>;
pub type SamplerConfig = samplers::SamplerConfig<f64>;
pub type TruncationProfile<'r> = samplers::TruncationProfile<'r, f64>;
pub type NodeMetrics = metrics::NodeMetrics<f64>;
pub type AggregateReport = metrics::AggregateReport<f64>;
pub type CalibrationSpec = calibrate::CalibrationSpec<f64>;
pub type CalibrationResult = calibrate::CalibrationResult<f64>;
