//! PNG rendering of kernel activation channels, inputs and predicted masks.
//!
//! Overlay colours by class index: 1 red `(230, 25, 75)`, 2 green
//! `(60, 180, 75)`, 3 blue `(0, 130, 200)`, 4 yellow `(255, 225, 25)`,
//! 5 orange `(245, 130, 48)`, 6 purple `(145, 30, 180)`, 7 cyan
//! `(70, 240, 240)`; higher indices wrap around.

use std::path::{Path, PathBuf};

use crate::data::io::{write_png_rgb, write_png_u8};
use crate::data::{Image, Mask};
use crate::error::{Error, Result};
use crate::grid::Grid;

pub const CLASS_COLORS: [[u8; 3]; 7] = [
    [230, 25, 75],
    [60, 180, 75],
    [0, 130, 200],
    [255, 225, 25],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
];

/// Panels per row of the channel grid.
pub const GRID_COLUMNS: usize = 5;
/// Separator width between panels, in pixels.
pub const PANEL_GAP: usize = 2;
const OVERLAY_ALPHA: f32 = 0.5;

pub fn class_color(class_id: u8) -> [u8; 3] {
    CLASS_COLORS[(class_id as usize - 1) % CLASS_COLORS.len()]
}

/// Maps activations in [0, 1] to 0..=255, upscaled by `scale` (nearest).
pub fn activation_panel(channel: &Grid<f32>, scale: usize) -> Grid<u8> {
    let scale = scale.max(1);
    Grid::from_fn(channel.height() * scale, channel.width() * scale, |r, c| {
        (channel.get(r / scale, c / scale).clamp(0.0, 1.0) * 255.0).round() as u8
    })
}

/// Lays out equally sized panels row-major, [`GRID_COLUMNS`] per row.
pub fn panel_grid(panels: &[Grid<u8>]) -> Result<Grid<u8>> {
    let first = panels
        .first()
        .ok_or_else(|| Error::InvalidArgument("no panels to lay out".into()))?;
    let (ph, pw) = first.dims();
    if panels.iter().any(|p| p.dims() != (ph, pw)) {
        return Err(Error::Shape("activation panels differ in size".into()));
    }
    let cols = panels.len().min(GRID_COLUMNS);
    let rows = panels.len().div_ceil(cols);
    let mut out = Grid::filled(rows * ph + (rows - 1) * PANEL_GAP, cols * pw + (cols - 1) * PANEL_GAP, 0u8);
    for (j, p) in panels.iter().enumerate() {
        let (r0, c0) = ((j / cols) * (ph + PANEL_GAP), (j % cols) * (pw + PANEL_GAP));
        for r in 0..ph {
            for c in 0..pw {
                out.set(r0 + r, c0 + c, p.get(r, c));
            }
        }
    }
    Ok(out)
}

/// Image intensities in [-1, 1] as 8-bit grayscale.
pub fn image_to_u8(image: &Image) -> Grid<u8> {
    image.pixels.map(|v| ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8)
}

/// Interleaved RGB of the input with class colours blended on top.
pub fn overlay_rgb(image: &Image, mask: &Mask) -> Result<Vec<u8>> {
    if image.dims() != mask.dims() {
        return Err(Error::Shape(format!(
            "image {:?} vs mask {:?}",
            image.dims(),
            mask.dims()
        )));
    }
    let gray = image_to_u8(image);
    let mut rgb = Vec::with_capacity(gray.as_slice().len() * 3);
    for (&g, &l) in gray.as_slice().iter().zip(mask.labels.as_slice()) {
        if l == 0 {
            rgb.extend([g; 3]);
        } else {
            let col = class_color(l);
            rgb.extend(col.map(|c| (OVERLAY_ALPHA * c as f32 + (1.0 - OVERLAY_ALPHA) * g as f32).round() as u8));
        }
    }
    Ok(rgb)
}

/// Everything `visualize` writes for one image.
pub struct Visualization {
    pub panels: Vec<Grid<u8>>,
    pub grid: Grid<u8>,
    pub input: Grid<u8>,
    pub overlay: Vec<u8>,
    pub mask: Mask,
}

/// `channels` are the J activation maps at feature resolution; they are
/// upscaled to the image size.
pub fn render(image: &Image, channels: &[Grid<f32>], mask: &Mask) -> Result<Visualization> {
    let first = channels
        .first()
        .ok_or_else(|| Error::InvalidArgument("no activation channels".into()))?;
    let scale = image.dims().0 / first.height().max(1);
    let panels: Vec<Grid<u8>> = channels.iter().map(|c| activation_panel(c, scale)).collect();
    Ok(Visualization {
        grid: panel_grid(&panels)?,
        panels,
        input: image_to_u8(image),
        overlay: overlay_rgb(image, mask)?,
        mask: mask.clone(),
    })
}

/// Writes `channels.png`, `channels/kernel_XX.png`, `input.png`,
/// `overlay.png` and `mask.png` (labels in dataset mask format).
pub fn write_visualization(dir: &Path, vis: &Visualization) -> Result<Vec<PathBuf>> {
    let panel_dir = dir.join("channels");
    std::fs::create_dir_all(&panel_dir).map_err(|e| Error::io(&panel_dir, e))?;
    let mut written = Vec::new();
    let mut put = |path: PathBuf, res: Result<()>| -> Result<()> {
        res?;
        written.push(path);
        Ok(())
    };
    let p = dir.join("channels.png");
    put(p.clone(), write_png_u8(&p, &vis.grid))?;
    for (j, panel) in vis.panels.iter().enumerate() {
        let p = panel_dir.join(format!("kernel_{j:02}.png"));
        put(p.clone(), write_png_u8(&p, panel))?;
    }
    let p = dir.join("input.png");
    put(p.clone(), write_png_u8(&p, &vis.input))?;
    let (h, w) = vis.mask.dims();
    let p = dir.join("overlay.png");
    put(p.clone(), write_png_rgb(&p, w, h, vis.overlay.clone()))?;
    let p = dir.join("mask.png");
    put(p.clone(), write_png_u8(&p, &vis.mask.labels))?;
    Ok(written)
}
