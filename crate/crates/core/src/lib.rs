//! Reliability diagnostics for LLM-as-judge evaluation.
//!
//! Two independent signals are computed from judge calls over a corpus of
//! (document, system output) pairs:
//!
//! * **Transitivity**: pairwise verdicts are assembled into one tournament per
//!   document and the share of directed 3-cycles among all triples is reported,
//!   together with five ways of turning pooled wins into a system ranking.
//! * **Conformal prediction**: direct 1-5 Likert scores are calibrated against
//!   rounded human averages with split conformal prediction; the width of the
//!   resulting prediction set is a per-instance trust signal.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`). Quantities
//! that feed medians and gold labels are kept as exact rationals. The aliases
//! at the crate root fix the scalar to `f64`, which is what the reports use.

pub mod conformal;
pub mod dataset;
pub mod domain;
pub mod gateway;
pub mod manifest;
pub mod pipeline;
pub mod ranking;
pub mod scalar;
pub mod stats;
pub mod tournament;

pub use domain::{Criterion, EvalInstance, Likert, LikertRecord, PairwiseVerdict, Side};
pub use scalar::Scalar;

/// Exact rational used for violation rates (cycles over triples).
pub type Rate = num_rational::Ratio<u64>;
/// Exact rational used for averaged human annotations.
pub type HumanScore = num_rational::Ratio<i64>;

pub type Correlation = stats::Correlation<f64>;
pub type MeanCi = stats::MeanCi<f64>;
pub type RankingResult = ranking::RankingResult<f64>;
pub type BradleyTerryFit = ranking::BradleyTerryFit<f64>;
pub type SplitEvaluation = conformal::SplitEvaluation<f64>;
pub type ReliabilityBin = conformal::ReliabilityBin<f64>;
pub type AgreementMatrix = conformal::AgreementMatrix<f64>;

pub type RankingResult32 = ranking::RankingResult<f32>;
pub type SplitEvaluation32 = conformal::SplitEvaluation<f32>;
