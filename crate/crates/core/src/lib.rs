//! Planning in tabular MDPs whose actions are partitioned into groups.
//!
//! The crate covers the exact tabular machinery (Bellman operators, value
//! iteration, policy evaluation), grouping functions and their deviation
//! factors, generative-model estimation of the grouped MDP, closed-form
//! performance bounds and grouping selection, plus a few benchmark
//! environments.

pub mod bounds;
pub mod envs;
pub mod error;
pub mod estimation;
pub mod experiments;
pub mod grouping;
pub mod mdp;
pub mod rng;
pub mod selector;

pub use error::{Error, Result};
pub use grouping::{GroupedMdp, GroupingFunction, InnerPolicy};
pub use mdp::{PolicyTable, StopRule, TabularMdp, ValueTables};
pub use rng::RngSpec;
