//! Checkpoint files.
//!
//! Little-endian layout:
//!
//! ```text
//! magic      4 bytes  "CANC"
//! version    u32      1
//! spec hash  u64      NetSpec::hash of the network the weights belong to
//! bundles, back to back until end of file:
//!   name length u32, name bytes (UTF-8)
//!   dim count   u32, dims as u64 each
//!   values      f64 each, product(dims) of them
//! ```

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Real;

pub const MAGIC: &[u8; 4] = b"CANC";
pub const VERSION: u32 = 1;

pub fn write_checkpoint(path: &Path, spec_hash: u64, store: &ParamStore) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&spec_hash.to_le_bytes())?;
    for (_, p) in store.iter() {
        w.write_all(&(p.name.len() as u32).to_le_bytes())?;
        w.write_all(p.name.as_bytes())?;
        w.write_all(&(p.dims.len() as u32).to_le_bytes())?;
        for &d in &p.dims {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in &p.value {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                message: format!("truncated {what}: need {n} bytes, {} left", self.buf.len() - self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Bundles of a checkpoint as `(name, dims, values)`, plus its spec hash.
/// One stored bundle: name, dims, values.
pub type Bundle = (String, Vec<usize>, Vec<Real>);

pub fn read_checkpoint(path: &Path) -> Result<(u64, Vec<Bundle>)> {
    let mut buf = Vec::new();
    File::open(path)?.read_to_end(&mut buf)?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "bad magic, expected CANC".into(),
        });
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported checkpoint version {version}"),
        });
    }
    let hash = c.u64("spec hash")?;
    let mut bundles = Vec::new();
    while c.pos < buf.len() {
        let at = c.pos;
        let len = c.u32("name length")? as usize;
        let name = std::str::from_utf8(c.take(len, "name")?)
            .map_err(|_| Error::Format {
                offset: at as u64 + 4,
                message: "bundle name is not UTF-8".into(),
            })?
            .to_string();
        let ndims = c.u32("dim count")? as usize;
        let dims = (0..ndims).map(|_| c.u64("dim").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let count: usize = dims.iter().product();
        let raw = c.take(count.checked_mul(8).ok_or_else(|| Error::Format {
            offset: c.pos as u64,
            message: "bundle size overflows".into(),
        })?, "values")?;
        let values = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap()) as Real).collect();
        bundles.push((name, dims, values));
    }
    Ok((hash, bundles))
}

/// Load a checkpoint into `store`, requiring the same spec hash and an exact bundle
/// match.
pub fn load_into(path: &Path, spec_hash: u64, store: &mut ParamStore) -> Result<()> {
    let (hash, bundles) = read_checkpoint(path)?;
    if hash != spec_hash {
        return Err(Error::Config(format!(
            "checkpoint was written for network {hash:016x}, loading into {spec_hash:016x}"
        )));
    }
    if bundles.len() != store.len() {
        return Err(Error::Config(format!(
            "checkpoint has {} bundles, network has {}",
            bundles.len(),
            store.len()
        )));
    }
    for (name, dims, values) in bundles {
        let id = store
            .id(&name)
            .ok_or_else(|| Error::Config(format!("checkpoint bundle {name} not in network")))?;
        if store.get(id).dims != dims {
            return Err(Error::Config(format!("bundle {name} has dims {dims:?}, network expects {:?}", store.get(id).dims)));
        }
        store.value_mut(id).copy_from_slice(&values);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        let mut s = ParamStore::new();
        s.add("w", vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, 1e-9, 7.0]).unwrap();
        s.add("b", vec![2], vec![0.25, -0.5]).unwrap();
        write_checkpoint(&path, 42, &s).unwrap();
        let mut t = s.clone();
        t.value_mut(t.id("w").unwrap()).fill(0.0);
        load_into(&path, 42, &mut t).unwrap();
        assert_eq!(s, t);
        assert!(matches!(load_into(&path, 43, &mut t), Err(Error::Config(_))));

        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::Format { .. })));
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::Format { offset: 0, .. })));
    }
}
