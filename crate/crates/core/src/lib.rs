//! Solvers for pseudo Markov decision processes (pMDPs).
//!
//! A pMDP draws `d(σ)` IID `(σ', r)` pairs from an ex-ante state `σ`; the agent
//! keeps one, paying a cost `c(i)` that depends on the draw's index. The
//! ex-post state space explodes as `(|Σ||R|)^d`, so the production path
//! ([`utility`]) iterates on `Σ` alone through the distribution of the best
//! draw's utility. Enumerating solvers ([`mdp`], [`exact`]) serve as oracles.
//!
//! Everything is generic over [`Scalar`]; the aliases below fix `f64`.

// `!(x >= 0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod exact;
pub mod mc;
pub mod mdp;
pub mod oracle;
pub mod pmdp;
pub mod problems;
pub mod scalar;
pub mod utility;

pub use error::{Error, Result};
pub use exact::{exante_value_iteration, extract_action_pmdp, extract_action_theorem4, theorem4_value_iteration};
pub use mc::{mcvi, simulate_strategy, SelectionRule, SimulationResult};
pub use mdp::{extract_policy, relative_value_iteration, value_iteration, Policy, Solve};
pub use pmdp::{ex_ante_reduction, ex_post_reduction, sample_ex_post, CostFunction, Draws, ExPostState, ShiftKind};
pub use problems::{card_game_pmdp, lra_joint_distribution, lra_pmdp, LraSpec};
pub use scalar::Scalar;
pub use utility::{
    build_utility_grid, dichotomy_cdf, fast_bellman, fast_relative_value_iteration, fast_value_iteration,
    naive_utility_distribution, single_draw_cdf,
};

pub type FiniteMdp = mdp::FiniteMdp<f64>;
pub type ValueVector = mdp::ValueVector<f64>;
pub type RelativeValueVector = mdp::RelativeValueVector<f64>;
pub type PseudoMdp = pmdp::PseudoMdp<f64>;
pub type ShiftDescriptor = pmdp::ShiftDescriptor<f64>;
pub type TheoremFourMdp = exact::TheoremFourMdp<f64>;
pub type UtilityGrid = utility::UtilityGrid<f64>;
pub type CumulativeUtilityDistribution = utility::CumulativeUtilityDistribution<f64>;
