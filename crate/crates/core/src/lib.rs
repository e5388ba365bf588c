//! Coronary calcium detection from scan-rescan CT pairs with a shared-weight
//! dual 3D network, a soft attention gate, and 3D Grad-CAM.
//!
//! The crate is organised bottom-up:
//!
//! - [`volgrid`]: `f64` tensors with reverse-mode autodiff, 3D convolution,
//!   pooling, Adam, and the checkpoint container.
//! - [`preproc`]: CT volumes, the `.vgrid` file format, and the normalisation
//!   pipeline that turns a raw HU volume plus lung mask into network input.
//! - [`model`]: the dual-path network, its losses, training and prediction.
//! - [`xai`]: Grad-CAM heatmaps and slice overlays.
//! - [`phantom`]: synthetic scan-rescan cohorts with Agatston-scored lesions.
//! - [`eval`]: confusion matrices, binary metrics, ROC and AUC.
//! - [`dataset`]: loading preprocessed cohorts and stratified splits.
//! - [`gradcheck`]: finite-difference checks of the analytic gradients.

// Validation is written as `!(x > lo)` so that NaN fails it.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod binio;
pub mod dataset;
mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod phantom;
pub mod preproc;
pub mod volgrid;
pub mod xai;

pub use binio::write_atomic;
pub use error::{Error, Result};

/// The guide's chapters, compiled here so their snippets run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/preprocessing.md")]
    mod preprocessing {}
    #[doc = include_str!("../../../book/src/phantoms.md")]
    mod phantoms {}
    #[doc = include_str!("../../../book/src/network.md")]
    mod network {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/gradcam.md")]
    mod gradcam {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
