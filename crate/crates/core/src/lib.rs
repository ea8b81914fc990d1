//! Desk-scale multimodal aphasia-type classifier built from scratch.
//!
//! The pieces, bottom to top:
//!
//! - [`tensor`]: a dense f64 tensor engine with reverse-mode automatic
//!   differentiation on an explicit computation tape, plus a finite-difference
//!   gradient checker.
//! - [`nn`]: reusable sequence blocks — trainable embedding table,
//!   bidirectional LSTM encoders, and pre-norm self-/cross-attention blocks.
//! - [`graph`]: per-sample heterogeneous speech-gesture graphs (keyword,
//!   gesture, and audio node sets joined by co-occurrence edges) and the
//!   cross-relation aggregation encoder that refines their representations.
//! - [`model`]: the full classifier — gesture-aware word-embedding update,
//!   cross-modal transformer fusion, and the 4-way decoder with
//!   cross-entropy loss.
//! - [`corpus`]: aligned (text, gesture, audio) token streams, a line-based
//!   file format, chunking, subject-disjoint splits, a synthetic corpus
//!   generator, and statistical utilities (WER, one-way ANOVA, pose-std).
//! - [`train`]: AdamW, exponential LR schedule, early-stopping training loop,
//!   evaluation metrics, and the ablation runner.

pub mod corpus;
pub mod error;
pub mod graph;
pub mod model;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
