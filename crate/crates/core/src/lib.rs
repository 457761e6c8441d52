//! Toy unified multimodal model: one vision encoder with continuous and
//! discrete adapters, one autoregressive decoder over a joint text+image
//! vocabulary, and a flow-matching pixel decoder, trained end to end on a
//! synthetic shapes corpus with an oracle evaluation harness.

pub mod data;
pub mod llm;
pub mod error;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod tokenizer;

pub use error::{Error, Result};
