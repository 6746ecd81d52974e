//! Online structure learning and structured planning for factored MDPs.

pub mod agents;
pub mod error;
pub mod experiment;
pub mod generators;
pub mod induction;
pub mod metrics;
pub mod model;
pub mod planner;
pub mod problem_file;
pub mod stats;
pub mod tree;

pub use error::{Error, Result};
