//! Desk-scale multimodal LLM toolkit: high-resolution visual tokenization
//! with skip tokens, a frozen two-encoder visual front end, a sparse
//! mixture-of-experts language model with routing instrumentation, unified
//! dialog data, an OCR page pipeline, and a one-stage trainer.

pub mod dialog;
pub mod error;
pub mod eval;
pub mod jsonl;
pub mod moe;
pub mod nn;
pub mod ocr;
pub mod multimodal;
pub mod routing;
pub mod synth;
pub mod train;
pub mod vision;

pub use error::{Error, Result};
