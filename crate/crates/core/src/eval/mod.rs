//! Map assembly and evaluation.

pub mod assemble;
pub mod hungarian;
pub mod metric;

pub use assemble::{assemble_map, fill_small_masks, AssembleError, MaskLabel, PlacedMask};
pub use hungarian::{column_invariant_match, greedy_match, hungarian_match, Matching};
pub use metric::{evaluate, ClassSpace, ConfusionCounts, EvalError, EvalReport, MatchStrategy};
