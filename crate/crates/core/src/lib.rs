//! Text-to-table generation with a sequence header decoder and a set of
//! parallel, order-free body-row decoders.

pub mod assignment;
pub mod autodiff;
pub mod data;
pub mod decoding;
pub mod error;
pub mod eval;
pub mod model;
pub mod pipeline;
pub mod table;
pub mod training;
pub mod tokenizer;

pub use error::{Error, Result};
