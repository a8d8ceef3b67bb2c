//! Parameter checkpoint files.
//!
//! Binary layout, all multi-byte values little-endian:
//!
//! ```text
//! magic        4 bytes  "RMCK"
//! version      u32      currently 1
//! param_count  u32
//! per parameter:
//!   name_len   u32
//!   name       UTF-8 bytes
//!   rank       u64
//!   extents    rank x u64
//!   data       prod(extents) x f64
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"RMCK";
const VERSION: u32 = 1;

/// Write named tensors to `path` in RMCK format.
pub fn save_checkpoint(path: &Path, entries: &[(&str, &Tensor)]) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, tensor) in entries {
        let name_bytes = name.as_bytes();
        buf.extend_from_slice(&(name_bytes.len() as u32).to_le_bytes());
        buf.extend_from_slice(name_bytes);
        buf.extend_from_slice(&(tensor.rank() as u64).to_le_bytes());
        for &e in tensor.shape() {
            buf.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for &v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file =
        fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    file.write_all(&buf)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Corrupt {
                path: self.path.clone(),
                reason: format!(
                    "truncated: wanted {} bytes at offset {}, file has {}",
                    n,
                    self.pos,
                    self.bytes.len()
                ),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Read an RMCK checkpoint back into named tensors.
pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let path_str = path.display().to_string();
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic(path_str));
    }
    let mut r = Reader {
        bytes: &bytes,
        pos: 4,
        path: path_str.clone(),
    };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            path: path_str,
            version,
        });
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Corrupt {
                path: r.path.clone(),
                reason: "parameter name is not valid UTF-8".into(),
            })?
            .to_string();
        let rank = r.u64()? as usize;
        if rank > 8 {
            return Err(Error::Corrupt {
                path: r.path.clone(),
                reason: format!("implausible tensor rank {rank}"),
            });
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let len: usize = shape.iter().product();
        let raw = r.take(len * 8)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != r.bytes.len() {
        return Err(Error::Corrupt {
            path: r.path,
            reason: format!("{} trailing bytes after parameter table", r.bytes.len() - r.pos),
        });
    }
    Ok(out)
}
