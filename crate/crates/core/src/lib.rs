//! Composed audio-video-text retrieval engine over precomputed embeddings.
//!
//! The engine operates entirely on embedding tensors produced upstream by
//! frozen encoders (or by the built-in synthetic generator). It provides:
//!
//! - a learned audio resampler and a gated cross-attention fusion stack that
//!   merge frame and audio tokens into one clip embedding ([`resampler`],
//!   [`gft`]);
//! - query-weighted composition of the clip embedding with four text
//!   component embeddings ([`compose`]);
//! - symmetric InfoNCE training with a learnable temperature ([`objective`],
//!   [`trainer`]);
//! - exact full-gallery cosine ranking with R@K / mean-rank metrics
//!   ([`eval`]);
//! - the dataset side: binary tensor files, line-delimited manifests,
//!   checkpoints, a synthetic generator with planted retrieval structure
//!   ([`data`]), and threshold-based dedup / candidate pair mining
//!   ([`pipeline`]);
//! - finite-difference gradient verification for every trainable block
//!   ([`gradcheck`]).

pub mod cli;
pub mod compose;
pub mod data;
pub mod error;
pub mod eval;
pub mod gft;
pub mod gradcheck;
pub mod objective;
pub mod params;
pub mod pipeline;
pub mod resampler;
pub mod trainer;
pub mod tensor;

pub use error::{Error, Result};
