//! Checkpoint file: one JSON manifest line, a newline, then little-endian f32 tensor data.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::TrainConfig;
use crate::denoiser::Denoiser;
use crate::params::Parameters;
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const FORMAT: &str = "promogen-checkpoint";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub params: Parameters,
}

impl Checkpoint {
    pub fn denoiser(&self) -> Denoiser {
        Denoiser { config: self.config.network.clone(), params: self.params.clone() }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    config: TrainConfig,
    tensors: Vec<TensorEntry>,
    sha256: String,
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(checkpoint, &mut file)?;
    file.flush()?;
    Ok(())
}

/// Tensors are stored as 32-bit floats; values that are not exactly representable are rounded.
pub fn write_checkpoint<W: Write>(checkpoint: &Checkpoint, w: &mut W) -> Result<()> {
    if !checkpoint.params.is_finite() {
        return Err(Error::NonFinite);
    }
    let mut blob = Vec::with_capacity(4 * checkpoint.params.scalar_count());
    let mut tensors = Vec::new();
    for (name, t) in checkpoint.params.iter() {
        tensors.push(TensorEntry { name: name.to_string(), shape: [t.nrows(), t.ncols()], offset: blob.len() });
        for v in t.iter() {
            blob.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: CHECKPOINT_VERSION,
        config: checkpoint.config.clone(),
        tensors,
        sha256: hex::encode(Sha256::digest(&blob)),
    };
    serde_json::to_writer(&mut *w, &manifest)?;
    w.write_all(b"\n")?;
    w.write_all(&blob)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    read_checkpoint(&mut BufReader::new(std::fs::File::open(path)?))
}

pub fn read_checkpoint<R: BufRead>(r: &mut R) -> Result<Checkpoint> {
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(Error::Format("checkpoint manifest is not newline-terminated".into()));
    }
    let value: serde_json::Value = serde_json::from_slice(&line)?;
    if value.get("format").and_then(|f| f.as_str()) != Some(FORMAT) {
        return Err(Error::Format("not a promogen checkpoint".into()));
    }
    let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version { expected: CHECKPOINT_VERSION, found: version });
    }
    let manifest: Manifest = serde_json::from_value(value)?;
    let mut blob = Vec::new();
    r.read_to_end(&mut blob)?;
    if hex::encode(Sha256::digest(&blob)) != manifest.sha256 {
        return Err(Error::Checksum("tensor data does not match the recorded sha256".into()));
    }
    let mut params = Parameters::new();
    for t in &manifest.tensors {
        let [rows, cols] = t.shape;
        let end = t.offset + 4 * rows * cols;
        let bytes = blob
            .get(t.offset..end)
            .ok_or_else(|| Error::Format(format!("tensor `{}` runs past the end of the data", t.name)))?;
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let m = Array2::from_shape_vec((rows, cols), values).map_err(|e| Error::Format(e.to_string()))?;
        params.insert(t.name.clone(), m);
    }
    manifest.config.validate()?;
    let expected = crate::denoiser::init_parameters(&manifest.config.network, 0)?;
    for (name, t) in expected.iter() {
        let got = params.get(name).map_err(|_| Error::Format(format!("checkpoint lacks tensor `{name}`")))?;
        if got.dim() != t.dim() {
            return Err(Error::Format(format!("tensor `{name}` is {:?}, network expects {:?}", got.dim(), t.dim())));
        }
    }
    Ok(Checkpoint { config: manifest.config, params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::{init_parameters, NetworkConfig};

    fn tiny() -> Checkpoint {
        let mut config = TrainConfig::default();
        config.network = NetworkConfig { width: 8, blocks: 1, heads: 2, ..config.network };
        let mut params = init_parameters(&config.network, 1).unwrap();
        params.round_to_f32();
        Checkpoint { config, params }
    }

    fn bytes(c: &Checkpoint) -> Vec<u8> {
        let mut out = Vec::new();
        write_checkpoint(c, &mut out).unwrap();
        out
    }

    #[test]
    fn round_trip_is_bitwise() {
        let c = tiny();
        let back = read_checkpoint(&mut bytes(&c).as_slice()).unwrap();
        assert_eq!(back, c);
        for ((_, a), (_, b)) in back.params.iter().zip(c.params.iter()) {
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn tampered_blob_fails_checksum() {
        let mut b = bytes(&tiny());
        let last = b.len() - 3;
        b[last] ^= 0x40;
        assert!(matches!(read_checkpoint(&mut b.as_slice()), Err(Error::Checksum(_))));
    }

    #[test]
    fn old_version_rejected() {
        let b = bytes(&tiny());
        let split = b.iter().position(|&c| c == b'\n').unwrap();
        let head = std::str::from_utf8(&b[..split]).unwrap().replacen("\"version\":1", "\"version\":0", 1);
        let mut rebuilt = head.into_bytes();
        rebuilt.extend_from_slice(&b[split..]);
        assert!(matches!(
            read_checkpoint(&mut rebuilt.as_slice()),
            Err(Error::Version { expected: 1, found: 0 })
        ));
    }
}
