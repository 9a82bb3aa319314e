pub mod attention;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod contrastive;
pub mod corpus;
pub mod encoders;
pub mod error;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod probe;
pub mod train;

pub use error::{Error, Result};
