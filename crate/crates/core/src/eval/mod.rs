//! Downstream evaluation, consistency statistics and report tables.

pub mod downstream;
pub mod report;
pub mod stats;

pub use downstream::{delta_eval, train_downstream, DeltaConfig, DeltaResult, DownstreamModel};
pub use report::{consistency_report, ConsistencyReport, SourceConsistency, StrategyOutcome};
pub use stats::{auc, bh_fdr, midranks, pearson, spearman};
