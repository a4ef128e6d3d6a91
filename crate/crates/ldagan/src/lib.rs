//! Latent Dirichlet allocation over a bank of GAN generators.
//!
//! A Dirichlet prior Dir(α) governs a per-sample distribution π over K
//! generators; a mode z ~ Mult(π) routes each noise draw through one
//! generator, and a single discriminator scores the result. Training
//! alternates adversarial updates with a variational EM step: a fixed-point
//! E-step infers per-sample responsibilities (γ, ω), the generators ascend a
//! responsibility-weighted non-saturating objective, and α follows the exact
//! gradient of its part of the evidence lower bound.
//!
//! The crate is desk-scale by design: dense f64 MLPs, a deterministic seeded
//! RNG, and exact closed-form oracles (true log marginal, true mode
//! posterior) against which the variational machinery is verified.

pub mod data;
pub mod error;
pub mod gan;
pub mod inference;
pub mod metrics;
pub mod neural;
pub mod oracle;
pub mod special_math;
pub mod trainer;

pub use error::{Error, Result};
