//! Dataset divergence scoring, acquisition strategies and their evaluation.

pub mod data;
pub mod divergence;
pub mod error;
pub mod eval;
pub mod io;
pub mod par;
pub mod plain_ml;
pub mod secure_ml;
pub mod strategy;
pub mod synth;

pub use error::{CoreError, Result};
