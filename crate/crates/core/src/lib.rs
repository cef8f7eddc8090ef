//! Cost-effectiveness analysis for left-truncated, right-censored survival
//! data with treatment-initiation delays.

pub mod asymptotics;
pub mod cea;
pub mod cli;
pub mod cox;
pub mod data;
pub mod error;
pub mod io;
pub mod report;
pub mod rmst;
pub mod sim;
pub mod step;

pub use error::{CeaError, Result};
