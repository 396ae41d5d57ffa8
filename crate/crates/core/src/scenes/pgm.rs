//! Binary PGM (P5) import and export for scenes.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::physics::SceneGrid;

fn format_err(message: impl Into<String>) -> Error {
    Error::Format {
        section: "pgm".into(),
        message: message.into(),
    }
}

/// Encodes a scene as P5 with maxval 255 (values rounded to the nearest level).
pub fn encode_pgm(scene: &SceneGrid) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", scene.width(), scene.height()).into_bytes();
    out.extend(scene.values().iter().map(|v| (v * 255.0).round() as u8));
    out
}

/// Decodes a P5 image with maxval ≤ 255, rescaling pixels to `[0, 1]`.
pub fn decode_pgm(bytes: &[u8]) -> Result<SceneGrid> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(format_err("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| format_err("non-ASCII header"))?);
    }
    if fields[0] != "P5" {
        return Err(format_err(format!("unsupported magic {:?}", fields[0])));
    }
    let parse =
        |s: &str, what: &str| -> Result<usize> { s.parse().map_err(|_| format_err(format!("bad {what} {s:?}"))) };
    let width = parse(fields[1], "width")?;
    let height = parse(fields[2], "height")?;
    let maxval = parse(fields[3], "maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(format_err(format!("maxval {maxval} not in 1..=255")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let n = width * height;
    let raster = bytes
        .get(pos..pos + n)
        .ok_or_else(|| format_err(format!("raster truncated: expected {n} bytes")))?;
    if let Some(&v) = raster.iter().find(|&&v| usize::from(v) > maxval) {
        return Err(format_err(format!("pixel {v} exceeds maxval {maxval}")));
    }
    let values = raster.iter().map(|&v| f64::from(v) / maxval as f64).collect();
    SceneGrid::new(width, height, values, None)
}

pub fn write_pgm(path: impl AsRef<Path>, scene: &SceneGrid) -> Result<()> {
    fs::write(path, encode_pgm(scene))?;
    Ok(())
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<SceneGrid> {
    decode_pgm(&fs::read(path)?)
}
