//! Modified treatment policy estimation for state policy panels.

pub mod cli;
pub mod config;
pub mod density_ratio;
pub mod diagnostics;
pub mod error;
pub mod estimator;
pub mod inference;
pub mod io;
pub mod learners;
pub mod panel;
pub mod policy;
pub mod simulate;
pub mod stats;

pub use error::{Error, Result};
