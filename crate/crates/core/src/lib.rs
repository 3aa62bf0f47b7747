//! Cross-modal image segmentation through compositional representations.
//!
//! A source domain with labels and an unlabeled target domain are bridged by
//! cycle-consistent, least-squares adversarial translation. Deep features of
//! target-looking images are projected onto a bank of learnable von
//! Mises-Fisher kernels, and the resulting per-kernel activation maps feed a
//! small segmentation head.
//!
//! Module map:
//! - [`data`]: image/mask types, dataset loading, fold assignment, toy data.
//! - [`translation`]: encoders, generators, discriminators and their losses.
//! - [`vmf`]: kernel bank, composition maps and the clustering objective.
//! - [`seg`]: segmentation head, Dice loss and the translate-then-segment path.
//! - [`baseline`]: plain encoder-decoder segmenter for the supervised bounds.
//! - [`train`]: configuration, joint optimization, validation, checkpoints.
//! - [`metrics`]: DSC, ASSD, connected-component post-processing, reports.
//! - [`viz`]: channel-grid and overlay rendering.
//! - [`cli`]: the command-line surface.

pub mod baseline;
pub mod cli;
pub mod data;
pub mod error;
pub mod grid;
pub mod metrics;
pub mod nn;
pub mod seg;
pub mod train;
pub mod translation;
pub mod viz;
pub mod vmf;

pub use error::{Error, Result};
pub use grid::Grid;
