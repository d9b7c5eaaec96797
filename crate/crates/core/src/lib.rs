//! Sememe-driven language modeling: a lexicon of word senses annotated with
//! sememes, a sparse product-of-experts decoder over that lexicon, a small
//! LSTM language model around it, and the training and evaluation harness.

pub mod checkpoint;
pub mod cli;
pub mod corpus;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod lexicon;
pub mod model;
pub mod numerics;
pub mod preprocess;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
