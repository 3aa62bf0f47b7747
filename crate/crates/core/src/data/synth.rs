//! Synthetic two-domain cardiac-like slices.
//!
//! Both domains share one content distribution: a disk ("LV") inside an
//! annulus ("MYO") with a crescent ("RV") hugging the annulus on one side.
//! Instances are drawn independently per domain, so the data is unpaired.
//! Domain A renders bright structures on a dark background with a linear
//! bias field and white noise. Domain B inverts the contrast, uses a radial
//! bias field, spatially correlated noise and a gamma of 1.5.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::io::{to_u16, write_png_u16, write_png_u8};
use super::{normalize_intensities, Domain, Image, Manifest, Mask, Sample, Spacing};
use crate::error::{Error, Result};
use crate::grid::Grid;

pub const TOY_CLASS_NAMES: [&str; 3] = ["MYO", "LV", "RV"];
const MYO: u8 = 1;
const LV: u8 = 2;
const RV: u8 = 3;
const RV_GAP: f64 = 1.0;

/// Analytic content of one toy slice. Coordinates are (row, col) in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ToyShapes {
    pub center: (f64, f64),
    pub lv_radius: f64,
    pub myo_radius: f64,
    pub rv_center: (f64, f64),
    pub rv_radius: f64,
}

impl ToyShapes {
    fn sample(rng: &mut ChaCha8Rng, size: usize) -> Self {
        let s = size as f64;
        let lv_radius = rng.random_range(0.09..0.14) * s;
        let myo_radius = lv_radius + rng.random_range(0.04..0.07) * s;
        let rv_radius = rng.random_range(0.10..0.15) * s;
        let angle = rng.random_range(0.6..1.4) * PI;
        let rv_dist = myo_radius + 0.3 * rv_radius;
        let extent = myo_radius.max(rv_dist + rv_radius) + 1.0;
        let lo = extent + 1.0;
        let hi = s - extent - 2.0;
        let cy = rng.random_range(lo..hi);
        let cx = rng.random_range(lo..hi);
        Self {
            center: (cy, cx),
            lv_radius,
            myo_radius,
            rv_center: (cy + rv_dist * angle.sin(), cx + rv_dist * angle.cos()),
            rv_radius,
        }
    }

    /// Class of the pixel at integer position (row, col).
    pub fn label_at(&self, row: usize, col: usize) -> u8 {
        let (r, c) = (row as f64, col as f64);
        let d = (r - self.center.0).hypot(c - self.center.1);
        if d < self.lv_radius {
            LV
        } else if d < self.myo_radius {
            MYO
        } else if d >= self.myo_radius + RV_GAP
            && (r - self.rv_center.0).hypot(c - self.rv_center.1) < self.rv_radius
        {
            RV
        } else {
            0
        }
    }

    pub fn rasterize(&self, size: usize) -> Grid<u8> {
        Grid::from_fn(size, size, |r, c| self.label_at(r, c))
    }
}

#[derive(Clone, Debug)]
pub struct ToyDataset {
    pub size: usize,
    pub source: Vec<Sample>,
    pub target: Vec<Sample>,
    pub source_shapes: Vec<ToyShapes>,
    pub target_shapes: Vec<ToyShapes>,
}

/// Generates `n_per_domain` slices for each of the two toy domains.
pub fn synthesize_toy_dataset(n_per_domain: usize, image_size: usize, seed: u64) -> Result<ToyDataset> {
    if n_per_domain == 0 {
        return Err(Error::InvalidArgument("n_per_domain must be at least 1".into()));
    }
    if image_size < 32 {
        return Err(Error::InvalidArgument(format!(
            "image_size must be at least 32, got {image_size}"
        )));
    }
    let (source, source_shapes) = render_domain(Domain::Source, n_per_domain, image_size, seed, 1)?;
    let (target, target_shapes) = render_domain(Domain::Target, n_per_domain, image_size, seed, 2)?;
    Ok(ToyDataset {
        size: image_size,
        source,
        target,
        source_shapes,
        target_shapes,
    })
}

fn render_domain(
    domain: Domain,
    n: usize,
    size: usize,
    seed: u64,
    stream: u64,
) -> Result<(Vec<Sample>, Vec<ToyShapes>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let prefix = match domain {
        Domain::Source => "a",
        Domain::Target => "b",
    };
    let mut samples = Vec::with_capacity(n);
    let mut shapes = Vec::with_capacity(n);
    for i in 0..n {
        let content = ToyShapes::sample(&mut rng, size);
        let labels = content.rasterize(size);
        let raw = match domain {
            Domain::Source => style_a(&labels, &mut rng),
            Domain::Target => style_b(&labels, &mut rng),
        };
        let pixels = Grid::from_vec(size, size, normalize_intensities(&raw))?;
        samples.push(Sample {
            image: Image {
                id: format!("{prefix}{i:04}"),
                domain,
                spacing: Spacing::isotropic(),
                pixels,
            },
            mask: Some(Mask::new(labels, TOY_CLASS_NAMES.len() as u8)?),
        });
        shapes.push(content);
    }
    Ok((samples, shapes))
}

fn style_a(labels: &Grid<u8>, rng: &mut ChaCha8Rng) -> Vec<f64> {
    const BASE: [f64; 4] = [0.12, 0.55, 0.92, 0.72];
    let s = labels.height() as f64;
    let (a1, a2) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let noise = Normal::new(0.0, 0.03).unwrap();
    let mut out = Vec::with_capacity(labels.as_slice().len());
    for r in 0..labels.height() {
        for c in 0..labels.width() {
            let bias = 1.0 + 0.3 * (a1 * (r as f64 / s - 0.5) + a2 * (c as f64 / s - 0.5));
            let v = BASE[labels.get(r, c) as usize] * bias + noise.sample(rng);
            out.push(v.clamp(0.0, 1.0));
        }
    }
    out
}

fn style_b(labels: &Grid<u8>, rng: &mut ChaCha8Rng) -> Vec<f64> {
    const BASE: [f64; 4] = [0.90, 0.50, 0.10, 0.30];
    let (h, w) = labels.dims();
    let s = h as f64;
    let focus = (rng.random_range(0.0..s), rng.random_range(0.0..s));
    let white = Normal::new(0.0, 0.08).unwrap();
    let raw_noise: Vec<f64> = (0..h * w).map(|_| white.sample(rng)).collect();
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            // 3x3 box blur gives the noise a coarser texture than domain A
            let mut acc = 0.0;
            let mut cnt = 0.0;
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                    if rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w {
                        acc += raw_noise[rr as usize * w + cc as usize];
                        cnt += 1.0;
                    }
                }
            }
            let d = (r as f64 - focus.0).hypot(c as f64 - focus.1) / s;
            let bias = 1.0 - 0.25 * d;
            let v = (BASE[labels.get(r, c) as usize] * bias + acc / cnt).clamp(0.0, 1.0);
            out.push(v.powf(1.5));
        }
    }
    out
}

/// Writes a toy dataset in the standard directory layout with a manifest.
/// Domain A is the source (`A/`), domain B the target (`B/`).
pub fn write_toy_dataset(root: &Path, data: &ToyDataset) -> Result<()> {
    for (dir, samples) in [("A", &data.source), ("B", &data.target)] {
        let images = root.join(dir).join("images");
        let masks = root.join(dir).join("masks");
        fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
        fs::create_dir_all(&masks).map_err(|e| Error::io(&masks, e))?;
        for s in samples.iter() {
            write_png_u16(&images.join(format!("{}.png", s.id())), &to_u16(&s.image.pixels))?;
            if let Some(m) = &s.mask {
                write_png_u8(&masks.join(format!("{}.png", s.id())), &m.labels)?;
            }
        }
    }
    Manifest {
        source: "A".into(),
        target: "B".into(),
        num_classes: TOY_CLASS_NAMES.len() as u8,
        class_names: TOY_CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        spacing: [("A".to_string(), [1.0, 1.0]), ("B".to_string(), [1.0, 1.0])]
            .into_iter()
            .collect(),
        label_values: Some(vec![0, 1, 2, 3]),
    }
    .write(root)
}
