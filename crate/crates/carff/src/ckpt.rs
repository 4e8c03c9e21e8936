//! Checkpoint container: a small binary format holding a JSON header (model
//! config plus provenance hashes of upstream stages) followed by named f32
//! tensor blobs. Stage ordering is enforced by checking the recorded hashes,
//! so a forecaster can refuse a latent table produced by a different encoder.

use crate::error::{Error, Result};
use candle_core::{DType, Device, Tensor, Var};
use serde::{de::DeserializeOwned, Serialize};
use sha2::{Digest, Sha256};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"CARFFCK\0";
const VERSION: u32 = 1;

/// One named tensor: shape + row-major f32 data.
#[derive(Debug, Clone)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn from_tensor(name: &str, t: &Tensor) -> Result<Self> {
        let shape = t.dims().to_vec();
        let flat = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
        Ok(NamedTensor {
            name: name.to_string(),
            shape,
            data: flat,
        })
    }

    pub fn to_tensor(&self, device: &Device) -> Result<Tensor> {
        Ok(Tensor::from_vec(self.data.clone(), self.shape.as_slice(), device)?)
    }

    pub fn to_var(&self, device: &Device) -> Result<Var> {
        Ok(Var::from_tensor(&self.to_tensor(device)?)?)
    }
}

/// Serialized checkpoint: typed JSON header plus tensor section.
pub struct Checkpoint<H> {
    pub header: H,
    pub tensors: Vec<NamedTensor>,
}

impl<H: Serialize + DeserializeOwned> Checkpoint<H> {
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let header_json = serde_json::to_vec(&self.header)?;
        let mut out: Vec<u8> = Vec::new();
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        out.write_all(&(header_json.len() as u64).to_le_bytes())?;
        out.write_all(&header_json)?;
        out.write_all(&(self.tensors.len() as u64).to_le_bytes())?;
        for t in &self.tensors {
            let name = t.name.as_bytes();
            out.write_all(&(name.len() as u32).to_le_bytes())?;
            out.write_all(name)?;
            out.write_all(&(t.shape.len() as u32).to_le_bytes())?;
            for &d in &t.shape {
                out.write_all(&(d as u64).to_le_bytes())?;
            }
            let numel: usize = t.shape.iter().product();
            if numel != t.data.len() {
                return Err(Error::ShapeMismatch {
                    expected: format!("{numel} elements for {:?}", t.shape),
                    got: format!("{} in `{}`", t.data.len(), t.name),
                });
            }
            for &v in &t.data {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let mut r = std::io::Cursor::new(bytes.as_slice());
        let corrupt = |msg: &str| Error::CorruptCheckpoint(format!("{}: {msg}", path.display()));

        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| corrupt("truncated magic"))?;
        if &magic != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = read_u32(&mut r).map_err(|_| corrupt("truncated version"))?;
        if version != VERSION {
            return Err(corrupt(&format!("unsupported version {version}")));
        }
        let hlen = read_u64(&mut r).map_err(|_| corrupt("truncated header length"))? as usize;
        let mut hbuf = vec![0u8; hlen];
        r.read_exact(&mut hbuf).map_err(|_| corrupt("truncated header"))?;
        let header: H = serde_json::from_slice(&hbuf)
            .map_err(|e| corrupt(&format!("bad header json: {e}")))?;

        let n_tensors = read_u64(&mut r).map_err(|_| corrupt("truncated tensor count"))? as usize;
        let mut tensors = Vec::with_capacity(n_tensors);
        for _ in 0..n_tensors {
            let nlen = read_u32(&mut r).map_err(|_| corrupt("truncated tensor name"))? as usize;
            let mut nbuf = vec![0u8; nlen];
            r.read_exact(&mut nbuf).map_err(|_| corrupt("truncated tensor name"))?;
            let name = String::from_utf8(nbuf).map_err(|_| corrupt("non-utf8 tensor name"))?;
            let rank = read_u32(&mut r).map_err(|_| corrupt("truncated tensor rank"))? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u64(&mut r).map_err(|_| corrupt("truncated shape"))? as usize);
            }
            let numel: usize = shape.iter().product();
            let mut data = vec![0.0f32; numel];
            for v in data.iter_mut() {
                let mut b = [0u8; 4];
                r.read_exact(&mut b).map_err(|_| corrupt("truncated tensor data"))?;
                *v = f32::from_le_bytes(b);
            }
            tensors.push(NamedTensor { name, shape, data });
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Checkpoint { header, tensors })
    }

    pub fn tensor(&self, name: &str) -> Result<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name).ok_or_else(|| {
            Error::CorruptCheckpoint(format!("missing tensor `{name}`"))
        })
    }
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Hex SHA-256 of a file on disk; used to pin upstream-stage provenance.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let mut h = Sha256::new();
    h.update(&bytes);
    Ok(format!("{:x}", h.finalize()))
}

/// Fail with [`Error::ConfigMismatch`] when a recorded provenance hash does
/// not match the hash of the artifact actually supplied.
pub fn check_provenance(field: &str, recorded: &str, actual: &str) -> Result<()> {
    if recorded != actual {
        return Err(Error::ConfigMismatch {
            field: field.to_string(),
            ckpt: recorded.to_string(),
            expected: actual.to_string(),
        });
    }
    Ok(())
}
