//! Dual-track video token compression over latent tensor sequences.
//!
//! Anchor frames keep block-pruned full-resolution tokens. Every other frame
//! is reduced to its residual against the preceding anchor, pooled, and
//! compressed along time with a truncated DCT-II. The two streams are fused
//! under a hard token budget.

pub mod absorber;
pub mod anchor;
pub mod budget;
pub mod dct;
pub mod error;
pub mod freres;
pub mod fusion;
pub mod io;
pub mod latent;
pub mod pipeline;
pub mod prng;
pub mod spectrum;
pub mod synthetic;

pub use budget::{account_context, allocate, compression_ratio, BudgetRequest, CompressionPlan};
pub use error::{ErrorCategory, FreresError, Result};
pub use fusion::{FusionConfig, FusionMode, ModelWeights};
pub use latent::{Grid, LatentSequence, Token, TokenKind, TokenOrigin, TokenStream};
pub use pipeline::{run_pipeline, PipelineConfig, PlanReport};
