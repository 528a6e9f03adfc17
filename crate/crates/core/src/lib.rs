//! Desk-scale laboratory for continuous embedding diffusion with a
//! contextual autoregressive decoder.
//!
//! The pipeline factorizes text generation into two stages: a
//! variance-preserving diffusion process over frozen token embeddings
//! (trained with velocity prediction), followed by an autoregressive
//! Transformer decoder that cross-attends to the denoised embedding
//! sequence and rounds it back to discrete tokens. Everything here is
//! sized for a single CPU core: a small define-by-run tensor engine,
//! toy corpora with controllable sequential structure, exact
//! enumeration oracles for the information-theoretic claims behind
//! contextual rounding, and n-gram/perplexity metrics for the
//! fluency–diversity trade-off.

pub mod corpus;
pub mod diffusion;
pub mod metrics;
pub mod nets;
pub mod oracle;
pub mod rng;
pub mod sampler;
pub mod tensor;
pub mod train;
