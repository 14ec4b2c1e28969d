//! Unsupervised non-rigid shape matching driven by neural correspondence
//! denoising: spectral geometry, functional maps, a small diffusion network
//! with exact gradients, and the evaluation tools around them.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod eval;
pub mod featnet;
pub mod fmap;
pub mod fskd;
pub mod geometry;
pub mod losses;
pub mod mesh_io;
pub mod pipeline;
pub mod sparse;
pub mod spectral;
pub mod synth;

pub use error::{Error, Result};
pub use fmap::{Direction, FunctionalMap, PointMap};
pub use geometry::{AugmentParams, Shape};
pub use spectral::{LaplacianPair, SpectralBasis};
