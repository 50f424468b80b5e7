//! Invasion percolation on supercritical Galton-Watson trees.
//!
//! Lazily grown trees ([`tree`]), the invasion engine with backbone and pivot
//! extraction ([`invasion`]), the annealed survival function ([`survival`]),
//! the analytic pivot kernels and their reference processes
//! ([`pivot_chain`]), invasion-versus-uniform measure diagnostics
//! ([`measures`]) and the experiment driver ([`experiment`]).

// Negated comparisons below reject NaN on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
mod criteria;
pub mod error;
pub mod experiment;
pub mod invasion;
pub mod measures;
pub mod offspring;
pub mod pivot_chain;
pub mod rng;
pub mod stats;
pub mod survival;
pub mod tree;

pub use config::{Experiment, ExperimentConfig, Format};
pub use criteria::smoke_configs;
pub use error::{Error, Result};
pub use experiment::{run, run_with_threads, ExperimentReport};
pub use offspring::{GfConstants, OffspringDistribution};
pub use survival::SurvivalSolver;
pub use tree::{NodeId, TreeArena};
