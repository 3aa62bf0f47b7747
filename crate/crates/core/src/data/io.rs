//! Slice file formats.
//!
//! Two formats are understood, chosen by extension:
//! - `.png`: 8- or 16-bit single-channel grayscale.
//! - `.raw`: little-endian `u32` height, `u32` width, then `height * width`
//!   little-endian `f32` values in row-major order.

use std::fs;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma};

use crate::error::{Error, Result};
use crate::grid::Grid;

pub const IMAGE_EXTENSIONS: [&str; 2] = ["png", "raw"];

/// Reads a slice file as raw (un-normalized) intensities.
pub fn read_intensities(path: &Path) -> Result<Grid<f64>> {
    match extension(path).as_deref() {
        Some("png") => read_png(path),
        Some("raw") => read_raw(path),
        _ => Err(Error::Decode {
            path: path.to_path_buf(),
            message: "unsupported extension (expected .png or .raw)".into(),
        }),
    }
}

fn extension(path: &Path) -> Option<String> {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
}

fn read_png(path: &Path) -> Result<Grid<f64>> {
    let decode_err = |message: String| Error::Decode {
        path: path.to_path_buf(),
        message,
    };
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| decode_err(e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let values: Vec<f64> = match img {
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(f64::from).collect(),
        DynamicImage::ImageLuma16(buf) => buf.into_raw().into_iter().map(f64::from).collect(),
        other => {
            return Err(decode_err(format!(
                "expected single-channel grayscale, found {:?}",
                other.color()
            )))
        }
    };
    Grid::from_vec(h, w, values)
}

fn read_raw(path: &Path) -> Result<Grid<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let decode_err = |message: String| Error::Decode {
        path: path.to_path_buf(),
        message,
    };
    if bytes.len() < 8 {
        return Err(decode_err("truncated header".into()));
    }
    let h = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    if body.len() != h * w * 4 {
        return Err(decode_err(format!(
            "header says {h}x{w} ({} bytes) but body has {} bytes",
            h * w * 4,
            body.len()
        )));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Grid::from_vec(h, w, values)
}

pub fn write_raw(path: &Path, grid: &Grid<f32>) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 + grid.as_slice().len() * 4);
    bytes.extend_from_slice(&(grid.height() as u32).to_le_bytes());
    bytes.extend_from_slice(&(grid.width() as u32).to_le_bytes());
    for v in grid.as_slice() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_png_u8(path: &Path, grid: &Grid<u8>) -> Result<()> {
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(grid.width() as u32, grid.height() as u32, grid.as_slice().to_vec())
            .expect("grid length matches dims");
    save(path, buf.save(path))
}

pub fn write_png_u16(path: &Path, grid: &Grid<u16>) -> Result<()> {
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(grid.width() as u32, grid.height() as u32, grid.as_slice().to_vec())
            .expect("grid length matches dims");
    save(path, buf.save(path))
}

pub fn write_png_rgb(path: &Path, width: usize, height: usize, rgb: Vec<u8>) -> Result<()> {
    let buf: ImageBuffer<image::Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(width as u32, height as u32, rgb).ok_or_else(|| {
            Error::Shape(format!("rgb buffer does not match {height}x{width}"))
        })?;
    save(path, buf.save(path))
}

fn save(path: &Path, res: image::ImageResult<()>) -> Result<()> {
    res.map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Decode {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })
}

/// Maps an image in [-1, 1] onto the full 16-bit range.
pub fn to_u16(grid: &Grid<f32>) -> Grid<u16> {
    grid.map(|v| (((v.clamp(-1.0, 1.0) + 1.0) * 0.5) * 65535.0).round() as u16)
}
