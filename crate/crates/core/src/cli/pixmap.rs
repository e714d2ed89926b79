//! 8-bit binary pixmaps: P6 for RGB images, P5 for weight maps.
//!
//! Values in `[0, 1]` are quantized round-half-up, `q = ⌊255·v + ½⌋`,
//! clamped to `0..=255`; decoding maps `q` to `q / 255`, so a decode →
//! encode cycle is byte-exact.

use std::path::Path;

use crate::blur::{ImageTensor, WeightMap};
use crate::error::{Error, Result};

pub fn quantize(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn dequantize(q: u8) -> f64 {
    q as f64 / 255.0
}

fn encode(magic: &str, height: usize, width: usize, values: &[f64]) -> Vec<u8> {
    let mut out = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| quantize(v)));
    out
}

pub fn encode_p6(img: &ImageTensor) -> Vec<u8> {
    encode("P6", img.height(), img.width(), img.data())
}

pub fn encode_p5(map: &WeightMap) -> Vec<u8> {
    encode("P5", map.height(), map.width(), map.data())
}

/// Header parse: magic, width, height and maxval separated by whitespace
/// and `#` comments, then exactly one whitespace byte before the raster.
fn decode(bytes: &[u8], magic: &[u8; 2], channels: usize) -> Result<(usize, usize, Vec<f64>)> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(Error::Format(format!(
            "expected a {} pixmap",
            String::from_utf8_lossy(magic)
        )));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("malformed pixmap header".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("pixmap header number out of range".into()))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Format("malformed pixmap header".into()));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::Format(format!("only 8-bit pixmaps are supported, maxval = {maxval}")));
    }
    let expected = width * height * channels;
    let raster = &bytes[pos..];
    if raster.len() != expected {
        return Err(Error::Format(format!(
            "pixmap raster has {} bytes, expected {expected}",
            raster.len()
        )));
    }
    Ok((height, width, raster.iter().map(|&q| dequantize(q)).collect()))
}

pub fn decode_p6(bytes: &[u8]) -> Result<ImageTensor> {
    let (h, w, data) = decode(bytes, b"P6", 3)?;
    ImageTensor::new(h, w, data)
}

pub fn decode_p5(bytes: &[u8]) -> Result<WeightMap> {
    let (h, w, data) = decode(bytes, b"P5", 1)?;
    WeightMap::new(h, w, data)
}

pub fn write_p6(path: &Path, img: &ImageTensor) -> Result<()> {
    std::fs::write(path, encode_p6(img))?;
    Ok(())
}

pub fn write_p5(path: &Path, map: &WeightMap) -> Result<()> {
    std::fs::write(path, encode_p5(map))?;
    Ok(())
}

pub fn read_p6(path: &Path) -> Result<ImageTensor> {
    decode_p6(&std::fs::read(path)?)
}

pub fn read_p5(path: &Path) -> Result<WeightMap> {
    decode_p5(&std::fs::read(path)?)
}
