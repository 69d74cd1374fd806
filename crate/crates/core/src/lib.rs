//! Bidirectional LSTM translation encoders, fixed-size sentence
//! representations, natural language inference probes, and the reports
//! built on top of them.

pub mod corpora;
pub mod diagnostics;
pub mod error;
pub mod evalreport;
pub mod kv;
pub mod numerics;
pub mod pipeline;
pub mod probe;
pub mod repr;
pub mod seq2seq;

pub use error::{Error, Result};
