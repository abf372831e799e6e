//! Synthetic images as 16-bit grayscale PNGs.
//!
//! A latent vector is normalized to unit length and stored as a single row of
//! 16-bit pixels, one per coordinate. Decoding recovers the direction to
//! within ~3e-5 per coordinate, which is all the toy encoder needs.

use std::io::Cursor;
use std::path::Path;

use image::{ImageBuffer, ImageFormat, Luma};

use crate::error::{Error, Result};
use crate::vector::normalized;

pub fn encode(latent: &[f64]) -> Result<Vec<u8>> {
    if latent.is_empty() {
        return Err(Error::Validation("cannot encode an empty latent".into()));
    }
    let unit = normalized(latent);
    let pixels: Vec<u16> = unit
        .iter()
        .map(|x| (((x.clamp(-1.0, 1.0) + 1.0) * 0.5) * 65535.0).round() as u16)
        .collect();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(unit.len() as u32, 1, pixels).expect("buffer sized to width");
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::Validation(e.to_string()))?;
    Ok(out.into_inner())
}

pub fn decode(bytes: &[u8]) -> std::result::Result<Vec<f64>, String> {
    let img =
        image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(|e| e.to_string())?;
    let img = img.to_luma16();
    Ok((0..img.width())
        .map(|x| img.get_pixel(x, 0)[0] as f64 / 65535.0 * 2.0 - 1.0)
        .collect())
}

pub fn write(path: &Path, latent: &[f64]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, encode(latent)?)?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Vec<f64>> {
    let ingestion = |reason: String| Error::Ingestion {
        paths: vec![path.to_path_buf()],
        reason,
    };
    let bytes = std::fs::read(path).map_err(|e| ingestion(e.to_string()))?;
    decode(&bytes).map_err(ingestion)
}
