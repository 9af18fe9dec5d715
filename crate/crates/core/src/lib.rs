//! Blind point-and-line localization against sparse semantic maps.
//!
//! Observed 2D semantic elements (pole lines, sign midpoints) are embedded by
//! a two-stream KNN-graph encoder, matched to a cropped 3D submap with
//! per-class entropic optimal transport, and registered with P3P-RANSAC
//! followed by a weighted point-and-line refinement. The whole chain is
//! differentiable for training, with unrolled transport gradients and
//! implicit differentiation through the pose solver.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod elements;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod learning;
pub mod mapping;
pub mod matcher;
pub mod optim;
pub mod pipeline;
pub mod pose;
pub mod synthetic;

pub use error::{Error, Result};
