use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::io::{read_intensities, IMAGE_EXTENSIONS};
use super::{normalize_intensities, Domain, Image, Mask, Sample, Spacing};
use crate::error::{Error, Result};
use crate::grid::Grid;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Dataset description stored at `<root>/manifest.json`.
///
/// `source` and `target` name the domain subdirectories. `label_values`
/// lists the raw mask values that map to labels `0..=num_classes` in order;
/// when absent, the sorted union of values found in the domain is used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub source: String,
    pub target: String,
    pub num_classes: u8,
    pub class_names: Vec<String>,
    pub spacing: BTreeMap<String, [f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_values: Option<Vec<i64>>,
}

impl Manifest {
    pub fn read(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Decode {
            path: path.clone(),
            message: e.to_string(),
        })?;
        if manifest.class_names.len() != manifest.num_classes as usize {
            return Err(Error::Decode {
                path,
                message: format!(
                    "{} class names for {} classes",
                    manifest.class_names.len(),
                    manifest.num_classes
                ),
            });
        }
        Ok(manifest)
    }

    pub fn write(&self, root: &Path) -> Result<()> {
        let path = root.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn domain_dir(&self, domain: Domain) -> &str {
        match domain {
            Domain::Source => &self.source,
            Domain::Target => &self.target,
        }
    }

    pub fn spacing_for(&self, domain: Domain) -> Result<Spacing> {
        let dir = self.domain_dir(domain);
        let [r, c] = self.spacing.get(dir).copied().unwrap_or([1.0, 1.0]);
        Spacing::new(r, c)
    }
}

/// Loads every slice of one domain listed under `<root>/<domain>/images`.
pub fn load_dataset(root: &Path, domain: Domain) -> Result<Vec<Sample>> {
    let manifest = Manifest::read(root)?;
    load_domain(root, &manifest, domain)
}

pub fn load_domain(root: &Path, manifest: &Manifest, domain: Domain) -> Result<Vec<Sample>> {
    let dir = root.join(manifest.domain_dir(domain));
    let spacing = manifest.spacing_for(domain)?;
    let image_dir = dir.join("images");
    let mask_dir = dir.join("masks");

    let mut entries: Vec<(String, PathBuf)> = Vec::new();
    let listing = fs::read_dir(&image_dir).map_err(|e| Error::io(&image_dir, e))?;
    for entry in listing {
        let path = entry.map_err(|e| Error::io(&image_dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if !ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            continue;
        }
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Decode {
                path: path.clone(),
                message: "file name is not valid UTF-8".into(),
            })?
            .to_string();
        entries.push((id, path));
    }
    entries.sort();

    let mut images = Vec::with_capacity(entries.len());
    let mut raw_masks = Vec::with_capacity(entries.len());
    for (id, path) in &entries {
        let raw = read_intensities(path)?;
        let (h, w) = raw.dims();
        let pixels = Grid::from_vec(h, w, normalize_intensities(raw.as_slice()))?;
        images.push(Image {
            id: id.clone(),
            domain,
            spacing,
            pixels,
        });

        let mask_path = IMAGE_EXTENSIONS
            .iter()
            .map(|ext| mask_dir.join(format!("{id}.{ext}")))
            .find(|p| p.is_file());
        match mask_path {
            Some(mp) => {
                let m = read_intensities(&mp)?;
                if m.dims() != (h, w) {
                    return Err(Error::Shape(format!(
                        "mask {} is {:?} but image {} is {:?}",
                        mp.display(),
                        m.dims(),
                        path.display(),
                        (h, w)
                    )));
                }
                raw_masks.push(Some((mp, m)));
            }
            None if domain == Domain::Source => {
                return Err(Error::MissingMask {
                    id: id.clone(),
                    path: mask_dir.join(format!("{id}.png")),
                })
            }
            None => raw_masks.push(None),
        }
    }

    let lookup = label_lookup(manifest, &raw_masks)?;
    images
        .into_iter()
        .zip(raw_masks)
        .map(|(image, raw)| {
            let mask = match raw {
                None => None,
                Some((path, grid)) => Some(remap_mask(&path, &grid, &lookup, manifest.num_classes)?),
            };
            Ok(Sample { image, mask })
        })
        .collect()
}

fn label_lookup(
    manifest: &Manifest,
    masks: &[Option<(PathBuf, Grid<f64>)>],
) -> Result<BTreeMap<i64, u8>> {
    let values: Vec<i64> = match &manifest.label_values {
        Some(v) => v.clone(),
        None => {
            let mut seen = BTreeSet::new();
            for (path, grid) in masks.iter().flatten() {
                for &v in grid.as_slice() {
                    seen.insert(integral(path, v)?);
                }
            }
            seen.into_iter().collect()
        }
    };
    if values.len() > manifest.num_classes as usize + 1 {
        return Err(Error::InvalidArgument(format!(
            "{} distinct mask values but only {} classes plus background",
            values.len(),
            manifest.num_classes
        )));
    }
    Ok(values
        .into_iter()
        .enumerate()
        .map(|(i, v)| (v, i as u8))
        .collect())
}

fn integral(path: &Path, v: f64) -> Result<i64> {
    if v.fract() != 0.0 || !v.is_finite() {
        return Err(Error::Decode {
            path: path.to_path_buf(),
            message: format!("mask value {v} is not an integer"),
        });
    }
    Ok(v as i64)
}

fn remap_mask(
    path: &Path,
    grid: &Grid<f64>,
    lookup: &BTreeMap<i64, u8>,
    num_classes: u8,
) -> Result<Mask> {
    let mut labels = Vec::with_capacity(grid.as_slice().len());
    for &v in grid.as_slice() {
        let key = integral(path, v)?;
        let label = lookup.get(&key).copied().ok_or_else(|| Error::Decode {
            path: path.to_path_buf(),
            message: format!("mask value {key} not in manifest label_values"),
        })?;
        labels.push(label);
    }
    Mask::new(Grid::from_vec(grid.height(), grid.width(), labels)?, num_classes)
}
