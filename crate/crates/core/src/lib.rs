//! Canonical political actor identification for marked claims in news text.
//!
//! A CRF tags actor mentions around a claim, a perceptron maps each mention
//! to a canonical name, and an optional LLM answer feeds a hybrid variant.

pub mod canonicalizer;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod extractor;
pub mod featurize;
pub mod hybrid;
pub mod llm;

pub use error::{Error, Result};
pub mod synth;
pub mod cli;
