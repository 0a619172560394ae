//! Judging partitions: subspace patching, effect concentration and baselines.

mod baselines;
mod gini;
mod patching;
mod toy_patch;

pub use baselines::{baseline_partition, subspace_variances, BaselineKind};
pub use gini::{gini, gini_report, rows_to_jsonl, summary_table, Gini, GiniReport, PatchingRecord, ReportRow, SATISFACTORY_GINI};
pub use patching::{delta_ld, delta_p, patch_compose, patch_rows, LogitPair, Logits};
pub use toy_patch::{toy_patching, GroupReadout, ToyPatching};
