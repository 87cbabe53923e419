//! Oblivious building blocks.
//!
//! Each primitive touches UM in a pattern fixed by its input and output
//! sizes. Data-dependent work (comparisons, group boundaries, accumulators)
//! happens on values already pulled into TM.

mod combine;
mod group;
mod scan;
mod sort;

pub use combine::{gen_union, stitch};
pub use group::{grouping_identity, grouping_running, grouping_running_sum, RunKind, Running};
pub use scan::{
    augment, augment_const, obl_filter, obl_project, tm_fold, Atom, BoundPredicate, CmpOp, Fold,
    FoldResult, Predicate,
};
pub use sort::obl_sort;

pub(crate) use scan::{count_by, filter_by, fold_sum, int_at, map_rows};
