//! Joint Wasserstein autoencoders for coordinated image/text embeddings.
//!
//! Two modality-specific autoencoders share a unit Gaussian latent prior,
//! enforced adversarially by a single discriminator, while supervised pairs
//! are aligned with a mean-squared or max-margin ranking loss. The crate
//! carries its own reverse-mode differentiation, the networks, every
//! objective, an Adam trainer, data ingestion and synthesis, and the
//! retrieval and phrase-localization evaluation harness.

pub mod autodiff;
pub mod data;
pub mod nets;
pub mod objectives;
pub mod eval;
pub mod trainer;
