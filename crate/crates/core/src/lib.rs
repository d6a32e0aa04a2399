//! Weak-to-strong supervision from explored agent trajectories.
//!
//! A weak policy's rollouts are merged into per-instruction trajectory trees.
//! Divergence points in a tree yield preference pairs, and an offline Monte
//! Carlo tree search over the same tree yields one synthesized path per
//! instruction. Both feed the training of a stronger tabular policy.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod io;
pub mod mcts;
pub mod metrics;
pub mod pairs;
pub mod pipeline;
pub mod policy;
pub mod rng;
pub mod toyenv;
pub mod tree;
pub mod types;

pub use error::{Error, Result};
pub use mcts::{extract_optimal_path, run_mcts, ucb, CmMode, MctsConfig, MctsStats};
pub use metrics::{best_of_n, expected_score, success_rate, EvalConfig, EvalMode, EvalReport, Evaluator};
pub use pairs::{extract_pairs, extract_pairs_with, PairConfig, PairDataset, PreferencePair};
pub use policy::{KeyFn, LossSpec, SoftmaxPolicy, TrainConfig};
pub use toyenv::EnvSpec;
pub use tree::{build_tree, tree_stats, SimilarityProvider, TrajTree, TreeConfig};
pub use types::{parse_trajectories, ExpertDataset, Instruction, Source, Step, Trajectory};
