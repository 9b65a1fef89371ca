//! Attention over 2D token grids with downsampled keys and values.
//!
//! Diffusion-style image models flatten an `h x w` latent into tokens and
//! run self-attention over all of them, which scales quadratically in the
//! token count. Because neighboring latent tokens tend to be highly
//! similar, the keys and values can be subsampled on the grid — cheap,
//! training-free, and without giving up per-query outputs. This crate
//! implements that kernel along with everything needed to measure it:
//!
//! - [`grid`]: the [`TokenGrid`] tensor, nearest-neighbor downsampling,
//!   and merge-ratio arithmetic.
//! - [`attention`]: dense scaled-dot-product attention and
//!   [`todo_attention`](attention::todo_attention) (downsampled K/V, full
//!   queries), row-streaming and bit-reproducible at any thread count.
//! - [`tome`]: the token-merging baseline (bipartite soft matching, merge
//!   by averaging, unmerge) with an instrumented similarity-pair counter.
//! - [`metrics`]: MSE, high-pass-filter magnitude, cosine similarity, and
//!   the neighborhood redundancy analyzer.
//! - [`bench`]: a wall-clock throughput harness and the attention-map
//!   memory estimator.
//! - [`tgrd`]: a small binary file format for token grids.

pub mod attention;
pub mod bench;
pub mod grid;
pub mod metrics;
pub mod tgrd;
pub mod tome;

pub use attention::{AttentionConfig, AttentionOutput, ExecMode};
pub use grid::{DownsampleSpec, MergeRatio, TokenGrid};
pub use metrics::{ImagePlane, SimilarityStats};
pub use tome::TomePlan;
