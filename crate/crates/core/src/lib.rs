//! Locally invariant domains for neural-network parameters.
//!
//! A locally invariant domain (LID) is an axis-aligned box in parameter space,
//! built around a trained parameter vector, on which a performance
//! specification provably holds. Any update projected back into the box keeps
//! that guarantee. This crate provides:
//!
//! - [`nn`]: a small dense-network engine with exact reverse-mode gradients,
//!   SGD training and weight-importance scores.
//! - [`interval`]: interval arithmetic and interval bound propagation (IBP)
//!   over parameter boxes, plus certified bounds on specification functions.
//! - [`lid`]: primal-dual growth of boxes under the IBP constraint, with
//!   checkpointing and importance biasing.
//! - [`safe`]: projection, intersection, checkpoint selection and projected
//!   gradient descent.
//! - [`cert`]: finite-sample margins and certificate issuance.
//!
//! Interchangeable algorithm families (checkpoint selection, finite-sample
//! margins, importance scoring) sit behind traits and are looked up by name
//! through [`registry::Registry`].

pub mod cert;
pub mod error;
pub mod interval;
pub mod lid;
pub mod nn;
pub mod registry;
pub mod rng;
pub mod safe;

pub use error::{Error, Result};
