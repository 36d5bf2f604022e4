//! Online clustering of contextual bandits.
//!
//! Users live on a graph whose connected components are the current
//! clusters; each cluster pools its members' least-squares statistics to
//! choose items by an upper confidence rule, and edges are deleted as user
//! estimates drift apart. `Gclub` additionally splits random clusters during
//! a cold-start phase.

pub mod bandit;
pub mod env;
pub mod error;
pub mod graph;
pub mod harness;
pub mod ingest;
pub mod policy;
pub mod split;

pub use bandit::{
    confidence_width, deletion_threshold, select_item, BanditState, ClusterAggregate, ContextSet,
    LinearEstimate, Matrix, Vector,
};

pub use env::{EnvSpec, SyntheticEnv};
pub use error::{Error, Result};
pub use graph::{SplitEvent, UserGraph};
pub use policy::{build_policy, Policy, PolicyConfig, PolicyKind, RoundRecord};
pub use split::{apply_split, bisect_component, SplitPlan};
