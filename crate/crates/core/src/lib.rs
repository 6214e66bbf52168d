//! Carbon-aware provisioning and scheduling of elastic batch jobs on a
//! capacity-capped cluster: an offline greedy oracle, a nearest-neighbour
//! knowledge base learned from it, the online policies that consult that
//! knowledge base, four baseline policies and a trace-driven simulator.

pub mod baselines;
pub mod cli;
pub mod config;
pub mod error;
pub mod model;
pub mod learning;
pub mod oracle;
pub mod policy;
pub mod sim;
pub mod traces;

pub use error::{Error, Result};
