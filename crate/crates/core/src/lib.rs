//! Core algorithms of FaceHop, a light-weight face attribute classifier
//! built from successive subspace learning instead of back-propagation.
//!
//! The crate is `no_std` (it only needs `alloc`). Everything here is a pure
//! function of its inputs; image decoding, manifests, the model file format
//! and the command-line driver live in the `facehop` crate.
//!
//! Pipeline, in the order the modules are used:
//!
//! 1. [`preprocess`]: eye-line alignment, crop, histogram equalization and
//!    bilinear resize to 32×32.
//! 2. [`saab`] and [`hoptree`]: a three-hop channel-wise Saab cascade
//!    (5×5 windows, 2×2 max pooling) whose channels form an energy tree.
//! 3. [`features`]: four hop-1 face regions, three hop-2 stripes and the
//!    full hop-3 response vector, each region reduced by a shared PCA.
//! 4. [`classify`]: one logistic regression per hop/region plus a meta
//!    logistic regression on their out-of-fold probabilities.
//!
//! [`augment`] rebalances the minority class and [`params`] itemizes the
//! model size.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod augment;
pub mod classify;
mod error;
pub mod features;
pub mod hoptree;
pub mod linalg;
mod math;
pub mod model;
pub mod params;
pub mod preprocess;
pub mod saab;

pub use error::{Error, Result};
pub use model::{FaceHop, FaceHopConfig, Prediction};
