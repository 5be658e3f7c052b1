pub mod catalog;
pub mod clickstream;
pub mod dataset;
pub mod encoding;
pub mod error;
pub mod experiments;
pub mod models;
pub mod probe;
pub mod synth;
pub mod tensor;
pub mod training;

pub use error::{Result, TraceError};
