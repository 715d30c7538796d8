//! Activation-map variation analytics for face image quality assessment.
//!
//! Given per-image activation maps from a face recognition network and
//! per-image quality scores from one or more quality estimators, this crate
//! selects the highest- and lowest-quality subsets, computes per-pixel
//! statistics over them (mean, median, and the spread about each), builds
//! differential maps between subsets and between estimators, evaluates
//! error-versus-reject curves, and renders everything to PNG and CSV.
//!
//! Modules map onto pipeline stages:
//!
//! - [`tensor_io`]: AMVT tensors, quality/pair CSVs, dataset manifest.
//! - [`partition`]: quantile selection and overlap matrices.
//! - [`stat_maps`]: MAM, MDAM, AM-V, AM-MV, their differentials and AD-MAM.
//! - [`erc`]: error-versus-reject characteristic at a fixed FMR threshold.
//! - [`scorecam`]: ScoreCAM maps over a pluggable [`scorecam::Evaluator`].
//! - [`render`]: colormaps, overlays, histograms, panels and plots.
//! - [`cli`]: the `amva` command line (feature `cli`).

pub mod erc;
pub mod error;
pub mod partition;
pub mod render;
pub mod scorecam;
pub mod stat_maps;
pub mod synthetic;
pub mod tensor_io;

#[cfg(feature = "cli")]
pub mod cli;

pub use error::{Error, ErrorClass, Result};
pub use tensor_io::{ActivationStack, ComparisonSet, Label, Manifest, Pair, QualityTable, Tensor};
