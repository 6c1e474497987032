use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::kspace::RealImage;

/// Linearly maps `[lo, hi]` (default: image min/max) onto `0..=65535`.
pub fn to_u16(img: &RealImage, range: Option<(f64, f64)>) -> Vec<u16> {
    let (lo, hi) = range.unwrap_or_else(|| {
        img.data()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)))
    });
    let span = if hi > lo { hi - lo } else { 1.0 };
    img.data()
        .iter()
        .map(|&v| (((v - lo) / span).clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect()
}

/// Binary 16-bit PGM (P5, big-endian samples).
pub fn write_pgm16(path: &Path, img: &RealImage, range: Option<(f64, f64)>) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    let mut bytes = format!("P5\n{} {}\n65535\n", img.width(), img.height()).into_bytes();
    for v in to_u16(img, range) {
        bytes.extend_from_slice(&v.to_be_bytes());
    }
    w.write_all(&bytes).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Reads a file written by [`write_pgm16`] back as raw 16-bit samples.
pub fn read_pgm16(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = || Error::InvalidArgument(format!("{} is not a 16-bit P5 file", path.display()));
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad());
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "65535" {
        return Err(bad());
    }
    let w: usize = fields[1].parse().map_err(|_| bad())?;
    let h: usize = fields[2].parse().map_err(|_| bad())?;
    let body = bytes.get(pos..pos + 2 * w * h).ok_or_else(bad)?;
    Ok((h, w, body.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()))
}

pub fn write_png16(path: &Path, img: &RealImage, range: Option<(f64, f64)>) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(f), img.width() as u32, img.height() as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Sixteen);
    let png_err = |e: png::EncodingError| Error::InvalidArgument(format!("png encoding failed: {e}"));
    let mut writer = enc.write_header().map_err(png_err)?;
    let data: Vec<u8> = to_u16(img, range).iter().flat_map(|v| v.to_be_bytes()).collect();
    writer.write_image_data(&data).map_err(png_err)?;
    writer.finish().map_err(png_err)
}
