use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::Image;
use crate::error::{ensure, Result};

/// Min-max scaling applied to a PGM dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PgmSidecar {
    pub width: usize,
    pub height: usize,
    pub min: f64,
    pub max: f64,
}

/// Writes a 16-bit binary PGM scaled so `min → 0`, `max → 65535`, plus a
/// `<path>.json` sidecar holding the scaling.
pub fn write_pgm16(path: &Path, image: &Image) -> Result<PgmSidecar> {
    let (min, max) = (image.min(), image.max());
    let span = if max > min { max - min } else { 1.0 };
    let mut bytes = format!("P5\n{} {}\n65535\n", image.width, image.height).into_bytes();
    for &v in &image.data {
        let q = (((v - min) / span) * 65535.0).round().clamp(0.0, 65535.0) as u16;
        bytes.extend_from_slice(&q.to_be_bytes());
    }
    fs::write(path, bytes)?;
    let side = PgmSidecar {
        width: image.width,
        height: image.height,
        min,
        max,
    };
    let mut sidecar = path.as_os_str().to_owned();
    sidecar.push(".json");
    fs::write(sidecar, serde_json::to_string_pretty(&side)?)?;
    Ok(side)
}

/// Reads a file written by [`write_pgm16`] back into raw 16-bit levels.
pub fn read_pgm16(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let bytes = fs::read(path)?;
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
        ensure!(pos > start, Format, "truncated PGM header");
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    ensure!(fields[0] == "P5" && fields[3] == "65535", Format, "not a 16-bit binary PGM");
    let parse = |s: &str| s.parse::<usize>().map_err(|_| crate::Error::Format(format!("bad PGM extent `{s}`")));
    let (w, h) = (parse(&fields[1])?, parse(&fields[2])?);
    ensure!(bytes.len() == pos + 2 * w * h, Format, "PGM payload length");
    let levels = bytes[pos..].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
    Ok((w, h, levels))
}
