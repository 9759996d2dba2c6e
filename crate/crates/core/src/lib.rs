//! Safe-navigation constraint learning toolkit: a 5x5 text-rendered gridworld
//! with scheduled domain shift, demonstration corpora, constraint learning
//! from positive and negative demonstrations (tabular BCE mode and the full
//! maximum-causal-entropy objective), constraint-aware policy optimization
//! with fixed or dual-ascent penalties, CVaR risk estimation, and a
//! multi-trial experiment harness with baselines and CSV metrics.

pub mod capo;
pub mod clirl;
pub mod cmdp;
pub mod demos;
pub mod env;
pub mod harness;
pub mod risk;

pub use capo::{AdamState, Multipliers, PolicyTable};
pub use clirl::{ConstraintTable, LabelMode, RewardWeights};
pub use cmdp::{Cmdp, RuleRegistry, Trajectory, TrajectoryStep};
pub use demos::DemoSet;
pub use env::{Action, DomainTag, GridState, ShiftSchedule};
pub use harness::{ExperimentConfig, MetricsRecord, Method, Phase};
