//! Field checkpoint: one JSON header line followed by the parameter vector
//! as little-endian `f32`.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Aabb, FieldConfig, FieldError, SdfFieldParams};

pub const CHECKPOINT_MAGIC: &str = "NFSEM-FIELD";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub magic: String,
    pub version: u32,
    pub dtype: String,
    pub config: FieldConfig,
    pub bounds: Aabb,
    pub scene_scale: f64,
    pub sharpness: f64,
    pub param_count: usize,
}

impl SdfFieldParams {
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<(), FieldError> {
        let header = CheckpointHeader {
            magic: CHECKPOINT_MAGIC.to_string(),
            version: CHECKPOINT_VERSION,
            dtype: "f32le".to_string(),
            config: self.config.clone(),
            bounds: self.bounds,
            scene_scale: self.scene_scale,
            sharpness: self.sharpness(),
            param_count: self.params.len(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        let mut blob = Vec::with_capacity(self.params.len() * 4);
        for &p in &self.params {
            blob.extend_from_slice(&(p as f32).to_le_bytes());
        }
        w.write_all(&blob)?;
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(r: R) -> Result<Self, FieldError> {
        let mut r = BufReader::new(r);
        let mut line = String::new();
        r.read_line(&mut line)?;
        let header: CheckpointHeader = serde_json::from_str(line.trim_end())?;
        if header.magic != CHECKPOINT_MAGIC || header.version != CHECKPOINT_VERSION || header.dtype != "f32le" {
            return Err(FieldError::BadCheckpoint(format!(
                "unsupported header {} v{} {}",
                header.magic, header.version, header.dtype
            )));
        }
        let mut blob = Vec::new();
        r.read_to_end(&mut blob)?;
        if blob.len() != header.param_count * 4 {
            return Err(FieldError::BadCheckpoint(format!(
                "expected {} bytes of parameters, found {}",
                header.param_count * 4,
                blob.len()
            )));
        }
        let params = blob
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        SdfFieldParams::from_parts(header.config, header.bounds, header.scene_scale, params)
    }

    pub fn save(&self, path: &Path) -> Result<(), FieldError> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_checkpoint(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, FieldError> {
        Self::read_checkpoint(std::fs::File::open(path)?)
    }

    /// Copy with every parameter rounded to `f32`, i.e. exactly what a
    /// checkpoint round trip produces.
    pub fn quantized(&self) -> Self {
        let mut out = self.clone();
        for p in &mut out.params {
            *p = *p as f32 as f64;
        }
        out
    }
}
