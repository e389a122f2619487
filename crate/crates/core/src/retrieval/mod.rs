// SPDX-License-Identifier: Apache-2.0

//! Indexing, ranking, metrics, splits, the lexical baseline and the
//! evaluation harnesses.

pub mod bm25;
pub mod eval;
pub mod index;
pub mod metrics;
pub mod split;

pub use bm25::{Bm25Index, Bm25Params};
pub use eval::{
    evaluate, evaluate_queries, robustness_eval, EvalError, EvalQuery, EvalRun, FamilySummary, Method, RobustnessReport,
};
pub use index::{build_index, encode_query, rank, rank_with, RankedEntry, RankedResult, SnapshotIndex};
pub use metrics::{format_table, MetricsError, MetricsReport};
pub use split::{ip_disjoint_split, IpSplit, SplitError};
