//! Tabular policy mirror descent with functional acceleration.

pub mod approx;
pub mod critics;
pub mod diagnostics;
pub mod error;
pub mod generators;
pub mod mdp;
pub mod mirror;
pub mod pmd;

pub use approx::{ApproxConfig, ApproxState, InnerLoopConfig, ParametricPolicy};
pub use critics::Critic;
pub use error::{Error, Result};
pub use generators::{example_mdp, generate_random_mdp, init_policy, ExampleId, InitMode, RandomMdpSpec};
pub use mdp::{evaluate, greedy, solve_optimal, visitation, Mdp, Policy, ValueFunctions};
pub use pmd::{ExactConfig, IterState, LookaheadMode, RateMode, StepSchedule, UpdateKind};
