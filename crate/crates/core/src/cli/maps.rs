//! Float map files: one JSON header line, then row-major little-endian `f32`
//! samples with channels interleaved.

use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{write_atomic, CliError};

pub const MAP_MAGIC: &str = "NFSEM-MAP";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapHeader {
    pub magic: String,
    pub dtype: String,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl MapHeader {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            magic: MAP_MAGIC.into(),
            dtype: "f32le".into(),
            height,
            width,
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn encode_map(header: &MapHeader, data: &[f32]) -> Result<Vec<u8>, CliError> {
    if data.len() != header.len() {
        return Err(CliError::Format(format!(
            "map holds {} values, header declares {}",
            data.len(),
            header.len()
        )));
    }
    let mut out = serde_json::to_vec(header)?;
    out.push(b'\n');
    out.reserve(data.len() * 4);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_map(bytes: &[u8]) -> Result<(MapHeader, Vec<f32>), CliError> {
    let mut r = BufReader::new(bytes);
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: MapHeader = serde_json::from_str(line.trim_end())
        .map_err(|e| CliError::Format(format!("bad map header: {e}")))?;
    if header.magic != MAP_MAGIC || header.dtype != "f32le" {
        return Err(CliError::Format(format!(
            "unsupported map {} / {}",
            header.magic, header.dtype
        )));
    }
    let mut blob = Vec::new();
    r.read_to_end(&mut blob)?;
    if blob.len() != header.len() * 4 {
        return Err(CliError::Format(format!(
            "map body has {} bytes, header needs {}",
            blob.len(),
            header.len() * 4
        )));
    }
    let data = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((header, data))
}

pub fn write_map(path: &Path, header: &MapHeader, data: &[f32]) -> Result<(), CliError> {
    write_atomic(path, &encode_map(header, data)?)
}

/// Read a map and check its shape.
pub fn read_map(path: &Path, height: usize, width: usize, channels: usize) -> Result<Vec<f32>, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::file(path, e))?;
    let (h, data) = decode_map(&bytes).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))?;
    if (h.height, h.width, h.channels) != (height, width, channels) {
        return Err(CliError::Format(format!(
            "{}: shape {}x{}x{}, expected {height}x{width}x{channels}",
            path.display(),
            h.height,
            h.width,
            h.channels
        )));
    }
    Ok(data)
}
