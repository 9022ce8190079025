//! Multi-objective reinforcement learning toolkit for household appliance
//! scheduling under shifting renewable-generation regimes.

pub mod context_detect;
pub mod dyna_model;
pub mod energy_env;
pub mod error;
pub mod gpi_agent;
pub mod manifest;
pub mod meta_reptile;
pub mod mo_core;
pub mod morl_metrics;
pub mod numcore;
pub mod toy;

pub use error::{Error, Result};
pub use mo_core::{Solution, SolutionSet, ValueVec, WeightVec};
