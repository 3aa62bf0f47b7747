//! Images, masks, dataset loading, fold assignment and the synthetic
//! two-domain generator.

mod folds;
pub mod io;
mod loader;
mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

pub use folds::{make_folds, FoldSplit, DEFAULT_VAL_FRACTION};
pub use loader::{load_dataset, load_domain, Manifest, MANIFEST_FILE};
pub use synth::{synthesize_toy_dataset, write_toy_dataset, ToyDataset, ToyShapes, TOY_CLASS_NAMES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn other(self) -> Domain {
        match self {
            Domain::Source => Domain::Target,
            Domain::Target => Domain::Source,
        }
    }
}

/// Millimetres per pixel along rows and columns.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spacing {
    pub row_mm: f64,
    pub col_mm: f64,
}

impl Spacing {
    pub fn new(row_mm: f64, col_mm: f64) -> Result<Self> {
        if !(row_mm > 0.0 && col_mm > 0.0 && row_mm.is_finite() && col_mm.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "spacing must be strictly positive, got ({row_mm}, {col_mm})"
            )));
        }
        Ok(Self { row_mm, col_mm })
    }

    pub fn isotropic() -> Self {
        Self {
            row_mm: 1.0,
            col_mm: 1.0,
        }
    }
}

/// Single-channel 2D image with intensities in [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub id: String,
    pub domain: Domain,
    pub spacing: Spacing,
    pub pixels: Grid<f32>,
}

impl Image {
    pub fn dims(&self) -> (usize, usize) {
        self.pixels.dims()
    }
}

/// Integer label grid; 0 is background, 1..=num_classes are structures.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    pub labels: Grid<u8>,
    pub num_classes: u8,
}

impl Mask {
    pub fn new(labels: Grid<u8>, num_classes: u8) -> Result<Self> {
        if let Some(&bad) = labels.as_slice().iter().find(|&&l| l > num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} exceeds class count {num_classes}"
            )));
        }
        Ok(Self {
            labels,
            num_classes,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.labels.dims()
    }

    pub fn count(&self, class_id: u8) -> usize {
        self.labels.as_slice().iter().filter(|&&l| l == class_id).count()
    }
}

/// An image with its mask, when one exists.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub mask: Option<Mask>,
}

impl Sample {
    pub fn id(&self) -> &str {
        &self.image.id
    }

    /// Copy of this sample with the mask dropped.
    pub fn without_mask(&self) -> Sample {
        Sample {
            image: self.image.clone(),
            mask: None,
        }
    }
}

/// Per-image min-max scaling to [-1, 1]. A constant image maps to all -1.
pub fn normalize_intensities(values: &[f64]) -> Vec<f32> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    if !(range > 0.0 && range.is_finite()) {
        return vec![-1.0; values.len()];
    }
    values
        .iter()
        .map(|&v| ((v - lo) / range * 2.0 - 1.0).clamp(-1.0, 1.0) as f32)
        .collect()
}
