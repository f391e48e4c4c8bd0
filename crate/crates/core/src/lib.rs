//! Class-imbalance-aware nucleus detection core.
//!
//! Everything in this crate is pure computation over in-memory buffers and
//! builds without `std`: a small reverse-mode autodiff engine, the Dice /
//! inverted-Dice / BCE / focal losses and the density-switching combination
//! of them, a toy U-Net with its trainer, sparse NMF stain separation,
//! weak-label generation by mask shrinking, the tiling/stitching/centroid
//! pipeline, detection metrics, and synthetic scene generators.
//!
//! File formats, the CLI, and wall-clock timing live in the `nuclei` crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod error;
pub mod fcn;
pub mod gradsuite;
pub mod groundtruth;
pub mod losses;
pub mod metrics;
pub mod morph;
pub mod pipeline;
pub mod raster;
pub mod stainsep;
pub mod stats;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use raster::{Mask, Plane, RgbImage};
pub use tensor::Tensor;
