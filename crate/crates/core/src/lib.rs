//! Transmission policy synthesis and evaluation for a sender with two
//! wireless interfaces, each modeled as a Gilbert-Elliott channel.
//!
//! The sender must deliver one periodic update per slot and fails once `N`
//! consecutive updates are missed. Each slot it picks which interfaces carry
//! a copy of the update; every active interface costs energy. The crate
//! builds the consecutive-miss decision process, solves it by value
//! iteration, runs agents with different observability assumptions, and
//! evaluates the resulting policies both exactly (absorbing-chain analysis)
//! and by seeded Monte-Carlo simulation.
//!
//! Module map:
//! - [`ge`]: two-state channel kernel, steady state, sampling.
//! - [`model`]: states, actions, costs and the three decision-process builders.
//! - [`solver`]: value iteration and greedy policy extraction.
//! - [`belief`]: belief tracking, the Q-MDP rule and runtime agents.
//! - [`analytic`]: fundamental-matrix analysis of frozen policies.
//! - [`sim`]: seeded episode engine, batches and paired comparisons.
//! - [`metrics`]: lifetime delta, policy deviation and reward loss.
//! - [`trace`]: latency traces, thresholding and parameter fitting.
//! - [`config`]: experiment configuration with the reference defaults.

pub mod analytic;
pub mod belief;
pub mod config;
pub mod error;
pub mod ge;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod sim;
pub mod solver;
pub mod trace;

pub use error::{Error, Result};
pub use ge::{GeParams, InterfaceState};
pub use model::{Action, CostModel, DecisionProcess, SystemState};
