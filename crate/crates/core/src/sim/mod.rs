//! Synthetic traffic worlds and policy evaluation.

mod policy;
mod replay;
mod run;
mod world;

pub use policy::{
    GreedyConfig, GreedyPolicy, LpPolicy, PerfectProjector, Policy, PolicyKind, UniformPolicy,
};
pub use replay::{replay, Replay, ReplayRun};
pub use run::{compare, run_policy, sign_test, Comparison, PolicySummary, RunReport, SimOptions};
pub use world::{diurnal_profile, weekly_profile, Arrivals, SyntheticSpec, World, WorldConfig};
