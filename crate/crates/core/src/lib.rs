pub mod checks;
pub mod data;
pub mod error;
pub mod numkit;
pub mod mamba;
pub mod metrics;
pub mod model;
pub mod ssm;
pub mod train;

pub use error::{Error, Result};
