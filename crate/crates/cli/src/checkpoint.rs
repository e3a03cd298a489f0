//! Binary checkpoints.
//!
//! Layout: `b"RLLB"`, format version (`u32` LE), header length (`u64` LE),
//! a UTF-8 JSON header holding the model config and tensor directory, then
//! every tensor as little-endian `f32` in directory order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use reversal_core::{ModelConfig, ModelParams};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"RLLB";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint: expected magic \"RLLB\", found {found:?}")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported checkpoint version {found} (this build reads version {VERSION})")]
    UnsupportedVersion { found: u32 },
    #[error("checkpoint truncated in {section}: expected {expected} bytes, found {found}")]
    Truncated { section: &'static str, expected: u64, found: u64 },
    #[error("malformed checkpoint header: {0}")]
    Header(String),
    #[error("{0} trailing bytes after tensor data")]
    TrailingData(u64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset from the start of the tensor data section.
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub config: ModelConfig,
    pub tensors: Vec<TensorEntry>,
}

pub fn header_for(params: &ModelParams<f32>) -> Header {
    let tensors = params
        .layout()
        .specs()
        .iter()
        .map(|s| TensorEntry { name: s.name.clone(), shape: s.shape.clone(), offset: 4 * s.offset as u64 })
        .collect();
    Header { config: params.config().clone(), tensors }
}

pub fn write_checkpoint<W: Write>(mut w: W, params: &ModelParams<f32>) -> Result<(), CheckpointError> {
    let header = serde_json::to_vec(&header_for(params)).map_err(|e| CheckpointError::Header(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    for x in params.data() {
        w.write_all(&x.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_section<R: Read>(r: &mut R, buf: &mut [u8], section: &'static str) -> Result<(), CheckpointError> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..])? {
            0 => return Err(CheckpointError::Truncated { section, expected: buf.len() as u64, found: filled as u64 }),
            n => filled += n,
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(ModelParams<f32>, ModelConfig), CheckpointError> {
    let mut magic = [0u8; 4];
    read_section(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic { found: magic });
    }
    let mut word = [0u8; 4];
    read_section(&mut r, &mut word, "version")?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion { found: version });
    }
    let mut len = [0u8; 8];
    read_section(&mut r, &mut len, "header length")?;
    let len = u64::from_le_bytes(len);
    if len > 1 << 30 {
        return Err(CheckpointError::Header(format!("implausible header length {len}")));
    }
    let mut header = vec![0u8; len as usize];
    read_section(&mut r, &mut header, "header")?;
    let header: Header = serde_json::from_slice(&header).map_err(|e| CheckpointError::Header(e.to_string()))?;

    let mut params = ModelParams::<f32>::zeros(&header.config).map_err(|e| CheckpointError::Header(e.to_string()))?;
    if header_for(&params).tensors != header.tensors {
        return Err(CheckpointError::Header("tensor directory does not match the model config".into()));
    }
    let mut bytes = vec![0u8; 4 * params.num_params()];
    read_section(&mut r, &mut bytes, "tensor data")?;
    for (x, b) in params.data_mut().iter_mut().zip(bytes.chunks_exact(4)) {
        *x = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(CheckpointError::TrailingData(rest.len() as u64));
    }
    Ok((params, header.config))
}

pub fn save_checkpoint(params: &ModelParams<f32>, path: &Path) -> Result<(), CheckpointError> {
    write_checkpoint(BufWriter::new(File::create(path)?), params)
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams<f32>, ModelConfig), CheckpointError> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use reversal_core::init_model;

    fn small() -> ModelParams<f32> {
        let cfg = ModelConfig { num_layers: 1, num_heads: 2, embed_dim: 8, mlp_dim: 16, ..ModelConfig::default() };
        init_model(&cfg, 3).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let p = small();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &p).unwrap();
        let (q, cfg) = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(&cfg, p.config());
        assert!(p.data().iter().zip(q.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn directory_offsets_are_contiguous() {
        let h = header_for(&small());
        let mut next = 0;
        for t in &h.tensors {
            assert_eq!(t.offset, next);
            next += 4 * t.shape.iter().product::<usize>() as u64;
        }
    }

    #[test]
    fn corruption_is_reported() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &small()).unwrap();

        let mut bad = buf.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(read_checkpoint(&bad[..]), Err(CheckpointError::BadMagic { .. })));

        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(matches!(read_checkpoint(&bad[..]), Err(CheckpointError::UnsupportedVersion { found: 9 })));

        let cut = &buf[..buf.len() - 3];
        assert!(matches!(read_checkpoint(cut), Err(CheckpointError::Truncated { section: "tensor data", .. })));
        assert!(matches!(read_checkpoint(&buf[..2]), Err(CheckpointError::Truncated { section: "magic", .. })));

        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(read_checkpoint(&long[..]), Err(CheckpointError::TrailingData(1))));
    }
}
