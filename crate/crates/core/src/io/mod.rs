//! File formats. Binary formats are little-endian, versioned and end with a
//! CRC32 of everything before it; see `FORMATS.md` for byte layouts. Writes go
//! through a temporary file in the target directory and are renamed into place.

mod artifacts;
mod bundle;
mod embedding;
mod epg_file;
mod ply;
mod trajectory;

use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use artifacts::{decode_pca, decode_vocabulary, encode_pca, encode_vocabulary, load_pca, load_vocabulary, save_pca, save_vocabulary};
pub use bundle::{load_bundle, parse_bundle, save_bundle, write_bundle, BundleFile};
pub use embedding::{load_embeddings, save_embeddings, ElementType, EmbeddingFile, EmbeddingTable};
pub use epg_file::{decode_epg, encode_epg, load_epg, save_epg, NODE_FIXED_BYTES};
pub use ply::{encode_ply, load_pointcloud, parse_ply, save_pointcloud, PlyEncoding};
pub use trajectory::{load_trajectory, parse_trajectory, save_trajectory, write_trajectory};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Format(String),
    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },
    #[error("file is truncated")]
    Truncated,
    #[error("checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    Checksum { stored: u32, computed: u32 },
    #[error("bad magic: expected {expected:?}")]
    Magic { expected: &'static str },
    #[error("unsupported version {0}")]
    Version(u16),
}

impl IoError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io { path: path.to_path_buf(), source }
    }

    fn format(msg: impl Into<String>) -> Self {
        IoError::Format(msg.into())
    }

    /// Attaches the file name to content errors.
    pub fn in_file(self, path: &Path) -> Self {
        match self {
            IoError::Io { .. } => self,
            other => IoError::Format(format!("{}: {}", path.display(), other)),
        }
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>, IoError> {
    std::fs::read(path).map_err(|e| IoError::io(path, e))
}

pub(crate) fn read_text(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))
}

/// Writes `bytes` to `path` via a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| IoError::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| IoError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| IoError::io(path, e))?;
    tmp.persist(path).map_err(|e| IoError::io(path, e.error))?;
    Ok(())
}

/// Little-endian byte sink.
#[derive(Default)]
pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn with_magic(magic: &[u8; 4], version: u16) -> Self {
        let mut w = Writer::default();
        w.buf.extend_from_slice(magic);
        w.u16(version);
        w
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn i32(&mut self, v: i32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f16(&mut self, v: f32) {
        self.buf.extend_from_slice(&half::f16::from_f32(v).to_le_bytes());
    }

    pub fn str16(&mut self, s: &str) -> Result<(), IoError> {
        let len = u16::try_from(s.len()).map_err(|_| IoError::format(format!("string too long: {} bytes", s.len())))?;
        self.u16(len);
        self.buf.extend_from_slice(s.as_bytes());
        Ok(())
    }

    /// Appends the CRC32 trailer and returns the bytes.
    pub fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf);
        self.u32(crc);
        self.buf
    }
}

/// Little-endian reader over a checksummed payload.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Verifies the trailer, magic and version; returns the reader positioned
    /// after the header together with the version.
    pub fn open(bytes: &'a [u8], magic: &'static [u8; 4], supported: &[u16]) -> Result<(Self, u16), IoError> {
        if bytes.len() < 10 {
            return Err(IoError::Truncated);
        }
        let expected = std::str::from_utf8(magic).unwrap_or("?");
        if &bytes[..4] != magic {
            return Err(IoError::Magic { expected });
        }
        let (payload, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let computed = crc32fast::hash(payload);
        if stored != computed {
            return Err(IoError::Checksum { stored, computed });
        }
        let mut r = Reader { buf: payload, pos: 4 };
        let version = r.u16()?;
        if !supported.contains(&version) {
            return Err(IoError::Version(version));
        }
        Ok((r, version))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], IoError> {
        let end = self.pos.checked_add(n).ok_or(IoError::Truncated)?;
        if end > self.buf.len() {
            return Err(IoError::Truncated);
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], IoError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub fn u8(&mut self) -> Result<u8, IoError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, IoError> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    pub fn u32(&mut self) -> Result<u32, IoError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64, IoError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub fn i32(&mut self) -> Result<i32, IoError> {
        Ok(i32::from_le_bytes(self.array()?))
    }

    pub fn f32(&mut self) -> Result<f32, IoError> {
        Ok(f32::from_le_bytes(self.array()?))
    }

    pub fn f64(&mut self) -> Result<f64, IoError> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    pub fn f16(&mut self) -> Result<f32, IoError> {
        Ok(half::f16::from_le_bytes(self.array()?).to_f32())
    }

    pub fn str16(&mut self) -> Result<String, IoError> {
        let n = self.u16()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| IoError::format("string is not valid UTF-8"))
    }

    pub fn str32(&mut self) -> Result<String, IoError> {
        let n = self.u32()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| IoError::format("string is not valid UTF-8"))
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    /// Count read from the file, checked against what the rest of the payload
    /// can possibly hold.
    pub fn count(&mut self, raw: u64, min_item_bytes: usize) -> Result<usize, IoError> {
        let n = usize::try_from(raw).map_err(|_| IoError::Truncated)?;
        if n.saturating_mul(min_item_bytes.max(1)) > self.remaining() {
            return Err(IoError::Truncated);
        }
        Ok(n)
    }

    pub fn finish(self) -> Result<(), IoError> {
        if self.remaining() != 0 {
            return Err(IoError::format(format!("{} unexpected trailing bytes", self.remaining())));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writer_reader_round_trip() {
        let mut w = Writer::with_magic(b"TEST", 3);
        w.u8(7);
        w.i32(-5);
        w.f64(1.25);
        w.str16("héllo").unwrap();
        let bytes = w.finish();
        let (mut r, v) = Reader::open(&bytes, b"TEST", &[3]).unwrap();
        assert_eq!(v, 3);
        assert_eq!(r.u8().unwrap(), 7);
        assert_eq!(r.i32().unwrap(), -5);
        assert_eq!(r.f64().unwrap(), 1.25);
        assert_eq!(r.str16().unwrap(), "héllo");
        r.finish().unwrap();
    }

    #[test]
    fn reader_rejects_damage() {
        let mut w = Writer::with_magic(b"TEST", 1);
        w.u64(42);
        let bytes = w.finish();
        assert!(matches!(Reader::open(&bytes, b"NOPE", &[1]), Err(IoError::Magic { .. })));
        assert!(matches!(Reader::open(&bytes, b"TEST", &[2]), Err(IoError::Version(1))));
        let mut bad = bytes.clone();
        bad[7] ^= 1;
        assert!(matches!(Reader::open(&bad, b"TEST", &[1]), Err(IoError::Checksum { .. })));
        assert!(matches!(Reader::open(&bytes[..5], b"TEST", &[1]), Err(IoError::Truncated)));
        let (mut r, _) = Reader::open(&bytes, b"TEST", &[1]).unwrap();
        r.u64().unwrap();
        assert!(matches!(r.u8(), Err(IoError::Truncated)));
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
