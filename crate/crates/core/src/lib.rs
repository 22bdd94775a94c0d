//! Desk-scale benchmark for univariate density estimators.
//!
//! The crate provides the synthetic mixture datasets ([`synthdata`]), the
//! evaluation metrics ([`metrics`]), a small reverse-mode differentiation
//! engine with dense networks ([`diffnet`]), the two model families
//! ([`wgan`] and [`gaussflow`]), random search with asynchronous successive
//! halving ([`hypersearch`]), and experiment orchestration ([`harness`]).
//! Model families are registered by name in a [`registry::Registry`] and
//! selected at runtime.

pub mod diffnet;
pub mod error;
pub mod gaussflow;
pub mod harness;
pub mod hypersearch;
pub mod metrics;
pub mod quad;
pub mod record;
pub mod registry;
pub mod rng;
pub mod special;
pub mod synthdata;
pub mod wgan;

pub use error::{Error, Result};
