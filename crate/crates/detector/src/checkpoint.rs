//! Self-describing weight files: magic, JSON header (model configuration,
//! anchors, parameter layout), then little-endian f32 weights.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use tinydet_core::ingest::AnchorSet;

use crate::error::{DetectorError, Result};
use crate::inference::Detector;
use crate::model::{build_model, ModelConfig, Param};

pub const MAGIC: &[u8; 8] = b"TINYDET\x01";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    pub anchors: AnchorSet,
    pub params: Vec<Param>,
    /// Free-form provenance (run id, epoch, validation loss).
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub fn write_checkpoint<W: Write>(mut w: W, det: &Detector, meta: serde_json::Value) -> Result<()> {
    let header = CheckpointHeader { model: det.model.config.clone(), anchors: det.anchors.clone(), params: det.model.params.clone(), meta };
    let json = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for p in &det.model.params {
        for v in &p.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_checkpoint(path: &Path, det: &Detector, meta: serde_json::Value) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), det, meta)
}

pub fn read_checkpoint<R: Read>(mut r: R, path: &Path) -> Result<(Detector, serde_json::Value)> {
    let bad = |reason: String| DetectorError::Checkpoint { path: path.to_path_buf(), reason };
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|e| bad(format!("missing header: {e}")))?;
    if &magic != MAGIC {
        return Err(bad("not a tinydet weight file".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(|e| bad(e.to_string()))?;
    let len = u64::from_le_bytes(len);
    if len > 64 << 20 {
        return Err(bad(format!("header length {len} is implausible")));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json).map_err(|e| bad(format!("truncated header: {e}")))?;
    let header: CheckpointHeader = serde_json::from_slice(&json).map_err(|e| bad(format!("header: {e}")))?;
    let mut model = build_model(header.model.clone())?;
    if model.params.len() != header.params.len() {
        return Err(bad(format!("{} tensors stored, architecture has {}", header.params.len(), model.params.len())));
    }
    for (p, stored) in model.params.iter_mut().zip(&header.params) {
        if p.shape != stored.shape || p.name != stored.name {
            return Err(bad(format!("tensor {} {:?} does not match {} {:?}", stored.name, stored.shape, p.name, p.shape)));
        }
        let mut buf = vec![0u8; p.data.len() * 4];
        r.read_exact(&mut buf).map_err(|e| bad(format!("truncated weights in {}: {e}", p.name)))?;
        for (v, b) in p.data.iter_mut().zip(buf.chunks_exact(4)) {
            *v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        }
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(bad("trailing bytes after weights".into()));
    }
    Ok((Detector::new(model, header.anchors)?, header.meta))
}

pub fn load_checkpoint(path: &Path) -> Result<(Detector, serde_json::Value)> {
    read_checkpoint(BufReader::new(File::open(path)?), path)
}
