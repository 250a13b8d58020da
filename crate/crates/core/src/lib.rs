//! Harmonized cellular and distributed massive-MIMO operation for
//! heterogeneous networks.

pub mod config;
pub mod error;
pub mod mc_oracle;
pub mod metrics;
pub mod num;
pub mod pipeline;
#[cfg(test)]
mod testutil;
pub mod rates;
pub mod scheduler;
pub mod seed;
pub mod topology;

pub use error::{Error, Result};
