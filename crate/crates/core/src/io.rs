//! PNG and PFM writers for rendered frames.
//!
//! PFM files are little-endian (scale `-1`) with rows stored bottom to top,
//! as the format requires. PNGs are 8-bit RGB of the clamped linear values.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{Image, RgbImage};

fn to_u8(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes raw 8-bit RGB bytes (`3 * width * height`, row-major) as a PNG.
pub fn write_png_rgb8(path: impl AsRef<Path>, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    if rgb.len() != 3 * width * height {
        return Err(Error::Format(format!("expected {} bytes of RGB data, got {}", 3 * width * height, rgb.len())));
    }
    let file = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(file, width as u32, height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| Error::Format(e.to_string()))?;
    writer.write_image_data(rgb).map_err(|e| Error::Format(e.to_string()))?;
    writer.finish().map_err(|e| Error::Format(e.to_string()))?;
    Ok(())
}

pub fn write_png(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    let bytes: Vec<u8> = img.pixels().iter().flat_map(|p| p.map(to_u8)).collect();
    write_png_rgb8(path, img.width(), img.height(), &bytes)
}

fn write_pfm_channels(path: &Path, width: usize, height: usize, channels: usize, data: &[f32]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let tag = if channels == 3 { "PF" } else { "Pf" };
    write!(w, "{tag}\n{width} {height}\n-1.0\n")?;
    let row = width * channels;
    let mut buf = Vec::with_capacity(4 * row);
    for y in (0..height).rev() {
        buf.clear();
        for v in &data[y * row..(y + 1) * row] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_pfm_rgb(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    let data: Vec<f32> = img.pixels().iter().flat_map(|p| p.map(|c| c as f32)).collect();
    write_pfm_channels(path.as_ref(), img.width(), img.height(), 3, &data)
}

pub fn write_pfm_gray(path: impl AsRef<Path>, img: &Image<f64>) -> Result<()> {
    let data: Vec<f32> = img.pixels().iter().map(|v| *v as f32).collect();
    write_pfm_channels(path.as_ref(), img.width(), img.height(), 1, &data)
}

/// Reads a PFM file back as `(width, height, channels, row-major top-down data)`.
pub fn read_pfm(path: impl AsRef<Path>) -> Result<(usize, usize, usize, Vec<f32>)> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |m: &str| Error::Format(format!("PFM: {m}"));
    let mut lines = Vec::new();
    let mut pos = 0;
    while lines.len() < 3 {
        let end = bytes[pos..].iter().position(|b| *b == b'\n').ok_or_else(|| bad("truncated header"))?;
        lines.push(std::str::from_utf8(&bytes[pos..pos + end]).map_err(|_| bad("non-utf8 header"))?.to_owned());
        pos += end + 1;
    }
    let channels = match lines[0].trim() {
        "PF" => 3,
        "Pf" => 1,
        _ => return Err(bad("unknown magic")),
    };
    let dims: Vec<usize> = lines[1].split_whitespace().filter_map(|s| s.parse().ok()).collect();
    let [width, height] = dims[..] else { return Err(bad("bad dimensions")) };
    let scale: f32 = lines[2].trim().parse().map_err(|_| bad("bad scale"))?;
    let payload = &bytes[pos..];
    let n = width * height * channels;
    if payload.len() != 4 * n {
        return Err(bad("payload size mismatch"));
    }
    let decode = |c: &[u8]| {
        let arr: [u8; 4] = c.try_into().unwrap();
        if scale < 0.0 {
            f32::from_le_bytes(arr)
        } else {
            f32::from_be_bytes(arr)
        }
    };
    let stored: Vec<f32> = payload.chunks_exact(4).map(decode).collect();
    let row = width * channels;
    let mut data = Vec::with_capacity(n);
    for y in (0..height).rev() {
        data.extend_from_slice(&stored[y * row..(y + 1) * row]);
    }
    Ok((width, height, channels, data))
}
