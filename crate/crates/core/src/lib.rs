//! Hierarchical multi-role decision engine.
//!
//! Each role is an extended continuous-time MDP ([`ctmdp`]); roles at
//! different levels are coordinated by a multi-level Stackelberg game
//! ([`game`]); peers merge proposals through a Rényi-divergence gate
//! ([`infotheory`]); prompts are chosen by Gaussian-process Thompson sampling
//! ([`bandit`]); and outputs are checked against short/long-term memory and a
//! rule base ([`memory`]). [`orchestrator`] runs the round loop, [`tools`]
//! provides the role-callable tools, and [`robustness`] reproduces the
//! trust-aware delegation experiment.

pub mod bandit;
pub mod config;
pub mod ctmdp;
pub mod game;
pub mod infotheory;
pub mod manifest;
pub mod memory;
pub mod orchestrator;
pub mod robustness;
pub mod tools;
