//! Tree extraction, evaluation metrics and reference baselines.

mod baseline;
mod cky;
mod io;
mod metrics;
mod tree;

pub use baseline::{baseline_tree, BaselineKind};
pub use cky::{cky_decode, SplitScores};
pub use io::{format_tree_line, parse_tree_file, write_tree_file, TreeRecord};
pub use metrics::{
    aggregate, align_clips, bracket_counts, bracketing_f1, scf1, scf1_counts, span_counts, tiou, Averaging,
    ClipInterval, Counts,
};
pub use tree::{nontrivial_spans, BinaryTree};
