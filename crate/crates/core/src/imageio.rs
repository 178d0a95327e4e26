//! PGM and raw-binary image I/O.
//!
//! 8-bit P5 output is min-max normalized per image, which keeps golden-byte
//! tests trivial. 16-bit PGM depth maps follow the netpbm convention
//! (big-endian samples, maxval > 255) and are interpreted as millimeters;
//! raw `.f32` maps are little-endian 32-bit reals in meters.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::event::SensorGeometry;

/// Encode an image as binary PGM (P5, maxval 255), min-max normalized.
/// Errors when the image is constant and no normalization exists.
pub fn encode_pgm_minmax(image: &[f64], width: u32, height: u32) -> Result<Vec<u8>> {
    if image.len() != width as usize * height as usize {
        return Err(Error::Shape(format!(
            "image has {} values, expected {}x{}",
            image.len(),
            width,
            height
        )));
    }
    let min = image.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = image.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max > min) {
        return Err(Error::Degenerate(
            "constant image cannot be min-max normalized".into(),
        ));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.reserve(image.len());
    let scale = 255.0 / (max - min);
    for &v in image {
        out.push(((v - min) * scale).round().clamp(0.0, 255.0) as u8);
    }
    Ok(out)
}

pub fn write_pgm_minmax(path: &Path, image: &[f64], width: u32, height: u32) -> Result<()> {
    let bytes = encode_pgm_minmax(image, width, height)?;
    File::create(path)?.write_all(&bytes)?;
    Ok(())
}

/// Write raw 32-bit little-endian reals, row-major.
pub fn write_f32_raw(path: &Path, image: &[f64]) -> Result<()> {
    let mut file = File::create(path)?;
    let mut buf = Vec::with_capacity(image.len() * 4);
    for &v in image {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    file.write_all(&buf)?;
    Ok(())
}

pub fn read_f32_raw(path: &Path, n_values: usize) -> Result<Vec<f64>> {
    let mut buf = Vec::new();
    File::open(path)?.read_to_end(&mut buf)?;
    if buf.len() != n_values * 4 {
        return Err(Error::Shape(format!(
            "raw file holds {} bytes, expected {}",
            buf.len(),
            n_values * 4
        )));
    }
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

fn parse_pgm_header(data: &[u8]) -> Result<(u32, u32, u32, usize)> {
    // P5, then whitespace-separated width, height, maxval, with '#'
    // comments allowed between tokens; a single whitespace byte ends the
    // header.
    if data.len() < 2 || &data[..2] != b"P5" {
        return Err(Error::Depth("not a binary PGM (P5) file".into()));
    }
    let mut pos = 2usize;
    let mut fields = [0u32; 3];
    for field in &mut fields {
        // Skip whitespace and comments.
        loop {
            while pos < data.len() && data[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < data.len() && data[pos] == b'#' {
                while pos < data.len() && data[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < data.len() && data[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Depth("malformed PGM header".into()));
        }
        let text = std::str::from_utf8(&data[start..pos]).unwrap();
        *field = text
            .parse()
            .map_err(|_| Error::Depth("malformed PGM header".into()))?;
    }
    if pos >= data.len() || !data[pos].is_ascii_whitespace() {
        return Err(Error::Depth("malformed PGM header".into()));
    }
    pos += 1;
    Ok((fields[0], fields[1], fields[2], pos))
}

/// Read a 16-bit PGM depth map in millimeters, returning meters.
pub fn read_pgm16_depth(path: &Path) -> Result<(u32, u32, Vec<f64>)> {
    let mut data = Vec::new();
    File::open(path)?.read_to_end(&mut data)?;
    let (width, height, maxval, offset) = parse_pgm_header(&data)?;
    if maxval <= 255 || maxval > 65535 {
        return Err(Error::Depth(format!(
            "expected a 16-bit PGM (maxval in 256..=65535), got maxval {maxval}"
        )));
    }
    let n = width as usize * height as usize;
    let body = &data[offset..];
    if body.len() < n * 2 {
        return Err(Error::Depth(format!(
            "PGM body holds {} bytes, expected {}",
            body.len(),
            n * 2
        )));
    }
    let depth = body[..n * 2]
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / 1000.0)
        .collect();
    Ok((width, height, depth))
}

/// Write a 16-bit PGM (big-endian, maxval 65535); values are millimeters.
pub fn write_pgm16(path: &Path, values_mm: &[u16], width: u32, height: u32) -> Result<()> {
    if values_mm.len() != width as usize * height as usize {
        return Err(Error::Shape("image size mismatch".into()));
    }
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    for &v in values_mm {
        out.extend_from_slice(&v.to_be_bytes());
    }
    File::create(path)?.write_all(&out)?;
    Ok(())
}

/// Load a depth map in meters, dispatching on the file extension:
/// `.pgm` for 16-bit millimeter PGM, anything else for raw f32 meters.
pub fn load_depth_map(path: &Path, geometry: &SensorGeometry) -> Result<Vec<f64>> {
    let is_pgm = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("pgm"))
        .unwrap_or(false);
    if is_pgm {
        let (w, h, depth) = read_pgm16_depth(path)?;
        if w != geometry.width || h != geometry.height {
            return Err(Error::Depth(format!(
                "depth map is {w}x{h}, sensor is {}x{}",
                geometry.width, geometry.height
            )));
        }
        Ok(depth)
    } else {
        read_f32_raw(path, geometry.n_pixels())
    }
}
