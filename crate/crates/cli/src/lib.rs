//! Library side of the `diffformer` command line tool.

mod config;
mod error;
pub mod pipeline;
pub mod render;
pub mod sweep;

pub use config::RunConfig;
pub use error::{CliError, Stage};
