pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod mixedmodel;
pub mod pipeline;
pub mod predictors;
pub mod regression;
pub mod report;
pub mod synth;
pub mod trace;

pub use error::{Error, Result};
