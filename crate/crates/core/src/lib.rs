pub mod continual;
pub mod dataset;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod network;
pub mod optim;
pub mod report;
pub mod runner;
pub mod seed;
pub mod theory;

pub use error::{Error, Result};
