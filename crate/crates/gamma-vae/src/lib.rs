//! Curvature-regularized variational autoencoders.
//!
//! The decoder of a VAE traces out an m-dimensional manifold in data space.
//! This crate computes that manifold's geometry exactly — induced metric,
//! Christoffel symbols, parameter-effects and extrinsic curvature — from
//! second-order jets of the decoder, and regularizes both curvature
//! scalars during training so straight lines and regular grids in latent
//! space stay meaningful in data space.
//!
//! Modules:
//! - [`jets`]: values, Jacobians, and Hessians of MLP decoders and analytic
//!   test manifolds.
//! - [`geometry`]: metric, connection, curvature scalars, tangent angles.
//! - [`training`]: the full objective, exact gradients, and the training
//!   loop.
//! - [`data`]: ingestion, normalization, synthetic manifolds, splits.
//! - [`evaluation`]: embeddings, PCA/LDA baselines, re-embedding
//!   consistency diagnostics.
//! - [`validate`]: finite-difference oracles for the derivative paths.
//!
//! See the `examples/` directory for one runnable example per capability;
//! the `gvae` binary wires the same operations into a pipeline.

pub mod cli;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod jets;
pub mod training;
pub mod validate;

pub use error::{Error, Result};
