//! Command-line orchestration: data generation, scoring, selection,
//! evaluation and replay.

pub mod cli;
pub mod error;
pub mod provenance;
pub mod run;

pub use cli::Cli;
pub use error::{CliError, Result};
pub use provenance::Provenance;
pub use run::{Env, Run, Transport};
