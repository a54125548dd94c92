//! Desk-scale multimodal transformer laboratory.
//!
//! Compares two ways of feeding visual tokens into a small causal language
//! model: splicing projected visual tokens into the text stream, and
//! additionally grounding every text embedding in a mean-pooled visual
//! vector before splicing. Includes synthetic vision-language worlds with
//! planted co-occurrence confounds, two-stage training, attention-balance
//! analysis and hallucination metrics.

pub mod bench;
pub mod cli;
pub mod error;
pub mod fsutil;
pub mod lens;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod stats;
pub mod synth;
pub mod train;
pub mod tensor;

pub use error::{Error, Result};
