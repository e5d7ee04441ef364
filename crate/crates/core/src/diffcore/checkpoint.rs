//! Parameter checkpoint files.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! "MCKPT1\0"
//! manifest byte length
//! manifest: entry count, then per entry
//!     name length, UTF-8 name, dtype code (u8: 0 = f32, 1 = f64), rank, extents
//! element buffers, little-endian, in manifest order
//! ```

use std::fs;
use std::path::Path;

use super::scalar::{DType, Element};
use super::{ParamSet, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 7] = b"MCKPT1\0";

pub fn write_checkpoint<T: Element>(path: &Path, params: &ParamSet<T>) -> Result<()> {
    let mut manifest = Vec::new();
    manifest.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        manifest.extend_from_slice(&(name.len() as u32).to_le_bytes());
        manifest.extend_from_slice(name.as_bytes());
        manifest.push(T::DTYPE.code());
        manifest.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &e in t.shape() {
            manifest.extend_from_slice(&(e as u32).to_le_bytes());
        }
    }
    let mut out = Vec::with_capacity(16 + manifest.len() + params.num_scalars() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
    out.extend_from_slice(&manifest);
    for (_, t) in params.iter() {
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format {
                path: self.path.to_path_buf(),
                msg: format!("truncated at byte {}", self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

struct EntryHeader {
    name: String,
    dtype: DType,
    shape: Vec<usize>,
}

fn read_manifest<'a>(bytes: &'a [u8], path: &'a Path) -> Result<(Vec<EntryHeader>, Cursor<'a>)> {
    let fmt = |msg: String| Error::Format {
        path: path.to_path_buf(),
        msg,
    };
    let mut cur = Cursor {
        buf: bytes,
        pos: 0,
        path,
    };
    if cur.take(CHECKPOINT_MAGIC.len())? != CHECKPOINT_MAGIC {
        return Err(fmt("bad magic".into()));
    }
    let manifest_len = cur.u32()?;
    let end = cur.pos + manifest_len;
    let count = cur.u32()?;
    let mut entries = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let nlen = cur.u32()?;
        let name = std::str::from_utf8(cur.take(nlen)?)
            .map_err(|_| fmt("entry name is not UTF-8".into()))?
            .to_string();
        let code = cur.take(1)?[0];
        let dtype = DType::from_code(code).ok_or_else(|| fmt(format!("unknown dtype {code}")))?;
        let rank = cur.u32()?;
        let shape = (0..rank).map(|_| cur.u32()).collect::<Result<Vec<_>>>()?;
        entries.push(EntryHeader { name, dtype, shape });
    }
    if cur.pos != end {
        return Err(fmt(format!(
            "manifest length {manifest_len} disagrees with its contents"
        )));
    }
    Ok((entries, cur))
}

/// Element type recorded in a checkpoint (that of its first entry).
pub fn read_checkpoint_dtype(path: &Path) -> Result<Option<DType>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (entries, _) = read_manifest(&bytes, path)?;
    Ok(entries.first().map(|e| e.dtype))
}

pub fn read_checkpoint<T: Element>(path: &Path) -> Result<ParamSet<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (entries, mut cur) = read_manifest(&bytes, path)?;
    let mut params = ParamSet::new();
    for e in entries {
        if e.dtype != T::DTYPE {
            return Err(Error::Contract(format!(
                "entry {:?} stores {:?}, requested {:?}",
                e.name,
                e.dtype,
                T::DTYPE
            )));
        }
        let n: usize = e.shape.iter().product();
        let size = e.dtype.size_of();
        let raw = cur.take(n * size)?;
        let data = raw.chunks_exact(size).map(T::read_le).collect();
        let t = Tensor::new(e.shape, data).map_err(|err| Error::Format {
            path: path.to_path_buf(),
            msg: err.to_string(),
        })?;
        params.push(e.name, t).map_err(|err| Error::Format {
            path: path.to_path_buf(),
            msg: err.to_string(),
        })?;
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: "trailing bytes after element buffers".into(),
        });
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamSet<f32> {
        let mut p = ParamSet::new();
        p.push("enc1/w", Tensor::new(vec![2, 1, 1, 1, 1], vec![0.5, -1.25]).unwrap())
            .unwrap();
        p.push("head/b", Tensor::new(vec![2], vec![f32::MIN_POSITIVE, 3.0]).unwrap())
            .unwrap();
        p
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mckpt");
        let p = sample();
        write_checkpoint(&path, &p).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..7], CHECKPOINT_MAGIC);
        let q: ParamSet<f32> = read_checkpoint(&path).unwrap();
        assert_eq!(p, q);
        assert_eq!(read_checkpoint_dtype(&path).unwrap(), Some(DType::F32));
        assert!(matches!(read_checkpoint::<f64>(&path), Err(Error::Contract(_))));
    }

    #[test]
    fn truncation_and_bad_magic_are_format_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mckpt");
        write_checkpoint(&path, &sample()).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_checkpoint::<f32>(&path), Err(Error::Format { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        fs::write(&path, &bad).unwrap();
        assert!(matches!(read_checkpoint::<f32>(&path), Err(Error::Format { .. })));
    }
}
