//! Weakly supervised object localization with background-image supervision.
//!
//! A binary network trained to tell a handful of background-only images
//! apart from target images yields input-gradient maps that highlight whole
//! foreground objects. Thresholded and reduced to their largest connected
//! component, those maps supervise the class activation maps of a
//! classification network during joint training.

pub mod components;
pub mod error;
pub mod evalkit;
pub mod nets;
pub mod rng;
pub mod saliency;
pub mod selftest;
pub mod synthdata;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Graph, Real, Tensor, Var};
