//! Style transfer engine.
//!
//! Two routes are provided:
//!
//! * optimization-based transfer ([`nst`]): the pixels of an output image are
//!   optimized with Adam or L-BFGS against content, Gram-matrix style and
//!   total-variation losses computed through a VGG-16 feature extractor;
//! * feed-forward transfer ([`wct`]): whitening/coloring of VGG-19 encoder
//!   features followed by per-level decoders, applied coarse to fine.
//!
//! Histogram color matching ([`color`]) and the image post-processing kernels
//! in [`tensor`] are shared by both routes.

pub mod color;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod linalg;
pub mod losses;
pub mod nst;
pub mod optimize;
pub mod pipeline;
pub mod tensor;
pub mod vgg;
pub mod wct;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use tensor::{Shape3, Tensor};
