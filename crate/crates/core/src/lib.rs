//! Batch multi-agent reinforcement learning over totally randomized tree kernels.
//!
//! The crate provides:
//!
//! - [`mdp`]: the random multi-agent benchmark MDP, batch sampling and policy evaluation.
//! - [`forest`]: frozen totally randomized tree ensembles and the normalized kernels they induce.
//! - [`fqi`]: centralized fitted Q iteration over the joint control space.
//! - [`amafqi`]: the approximated multi-agent fitted Q iteration, with a single-agent light mode.
//! - [`policy`]: the iterative greedy policy search and its classification generalization.
//! - [`oracle`]: exact tabular updates for small deterministic problems.
//!
//! Everything is deterministic given a seed.

pub mod amafqi;
pub mod controls;
pub mod error;
pub mod features;
pub mod forest;
pub mod fqi;
pub mod mdp;
pub mod oracle;
pub mod policy;
pub mod seeding;
pub mod stats;
pub mod trace;

pub use amafqi::{AmafqiModel, AmafqiOutcome, AmafqiParams, AuxQ, LocalQ, Mode};
pub use controls::ControlSpace;
pub use error::{Error, Result};
pub use forest::{ForestParams, KernelWeights, TreeEnsemble};
pub use fqi::{CentralQ, FqiOutcome, FqiParams};
pub use mdp::{BatchDataset, BatchSample, MdpSpec, RewardStats};
pub use policy::{GapReport, GeneralizedPolicy, PolicyEntry, PolicyTable};
pub use trace::TraceRow;

/// Reward upper bound of the benchmark MDP: mean rewards lie in `[0, 5]`
/// and each draw adds at most `0.5`.
pub const BENCHMARK_REWARD_MAX: f64 = 5.5;
