//! File formats, pipelines and the command line around `sas_core`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod export;
pub mod io;
pub mod pipeline;
pub mod svg;

pub use config::RunConfig;
pub use error::{AppError, AppResult};
