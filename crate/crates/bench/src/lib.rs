//! Sweep, fixture-join and frontier harness over the `vqa-fusion` models.
//!
//! A sweep counts every legal (profile, fusion, attention) configuration,
//! [`fixture`] loads published accuracies, [`tradeoff`] joins the two and
//! extracts the efficiency frontier, and [`emit`] writes CSV or JSON reports.

pub mod emit;
pub mod error;
pub mod fixture;
pub mod key;
pub mod sweep;
pub mod tradeoff;

pub use error::{BenchError, Result};
pub use key::ConfigKey;
