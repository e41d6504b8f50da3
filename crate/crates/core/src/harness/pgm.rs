//! 16-bit binary PGM (P5) snapshots of images.
//!
//! Values are affinely quantized to the full 16-bit range; the scale must be
//! recorded alongside (the CLI stores it in the JSON sidecar) to recover
//! physical values.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictors::GridShape;

/// Affine dequantization: `value = offset + scale * pixel`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PgmScale {
    pub offset: f64,
    pub scale: f64,
}

impl PgmScale {
    pub fn decode(&self, pixels: &[u16]) -> Vec<f64> {
        pixels.iter().map(|&p| self.offset + self.scale * p as f64).collect()
    }
}

/// Writes `data` as a 16-bit P5 file, returning the quantization scale.
pub fn write_pgm16(path: &Path, shape: GridShape, data: &[f64]) -> Result<PgmScale> {
    if data.len() != shape.len() {
        return Err(Error::domain("image data does not match shape"));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("cannot quantize non-finite image".into()));
    }
    let lo = data.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scale = if hi > lo { (hi - lo) / 65535.0 } else { 1.0 };
    let header = format!("P5\n{} {}\n65535\n", shape.width, shape.height);
    let mut bytes = Vec::with_capacity(header.len() + 2 * data.len());
    bytes.extend_from_slice(header.as_bytes());
    for v in data {
        let q = ((v - lo) / scale).round().clamp(0.0, 65535.0) as u16;
        bytes.extend_from_slice(&q.to_be_bytes());
    }
    fs::write(path, &bytes).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(PgmScale { offset: lo, scale })
}

/// Reads a 16-bit P5 file written by [`write_pgm16`].
pub fn read_pgm16(path: &Path) -> Result<(GridShape, Vec<u16>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let bad = |msg: &str| Error::config(format!("{}: {msg}", path.display()));

    // header: magic, width, height, maxval as whitespace-separated tokens,
    // '#' comments allowed
    let mut pos = 0usize;
    let mut tokens = Vec::new();
    while tokens.len() < 4 && pos < bytes.len() {
        while pos < bytes.len() && (bytes[pos] as char).is_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !(bytes[pos] as char).is_whitespace() {
            pos += 1;
        }
        if pos > start {
            tokens.push(
                std::str::from_utf8(&bytes[start..pos])
                    .map_err(|_| bad("non-ascii header"))?
                    .to_string(),
            );
        }
    }
    if tokens.len() != 4 || tokens[0] != "P5" {
        return Err(bad("not a binary PGM (P5) file"));
    }
    let width: usize = tokens[1].parse().map_err(|_| bad("bad width"))?;
    let height: usize = tokens[2].parse().map_err(|_| bad("bad height"))?;
    let maxval: u32 = tokens[3].parse().map_err(|_| bad("bad maxval"))?;
    if maxval != 65535 {
        return Err(bad("expected a 16-bit PGM (maxval 65535)"));
    }
    pos += 1; // single whitespace after maxval
    let shape = GridShape::new(height, width)?;
    let need = 2 * shape.len();
    if bytes.len() < pos + need {
        return Err(bad("truncated pixel data"));
    }
    let pixels: Vec<u16> = bytes[pos..pos + need]
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]))
        .collect();
    Ok((shape, pixels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_read_round_trip_within_quantization() {
        let shape = GridShape::new(4, 6).unwrap();
        let data: Vec<f64> = (0..24).map(|i| 0.5 + (i as f64) * 0.37).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        let scale = write_pgm16(&path, shape, &data).unwrap();
        let (shape2, pixels) = read_pgm16(&path).unwrap();
        assert_eq!(shape, shape2);
        let decoded = scale.decode(&pixels);
        for (a, b) in data.iter().zip(&decoded) {
            assert!((a - b).abs() <= scale.scale, "{a} vs {b}");
        }
    }

    #[test]
    fn constant_image_round_trips_exactly() {
        let shape = GridShape::new(2, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.pgm");
        let scale = write_pgm16(&path, shape, &[3.25; 4]).unwrap();
        let (_, pixels) = read_pgm16(&path).unwrap();
        assert_eq!(scale.decode(&pixels), vec![3.25; 4]);
    }

    #[test]
    fn read_rejects_non_pgm() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pgm");
        std::fs::write(&path, b"P6\n1 1\n255\n...").unwrap();
        assert!(read_pgm16(&path).is_err());
    }
}
