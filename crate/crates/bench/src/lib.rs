//! Synthetic shopping workloads for measuring cache hit rates.
//!
//! Three instruction families are generated from a built-in catalog, run
//! through an exact cache, a semantic cache or the gencache runtime with
//! scripted models, and every hit is checked against the instruction's
//! ground truth.

pub mod baselines;
pub mod catalog;
pub mod doubles;
pub mod generate;
pub mod oracle;
pub mod run;

pub use generate::{Family, GroundTruth, SyntheticInstruction};
pub use run::{cost_ratio_series, run_bench, run_strategy, BenchOptions, BenchReport, RatioPoint, Strategy};
