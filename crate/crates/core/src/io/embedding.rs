use std::collections::HashMap;
use std::path::Path;

use super::{read_file, write_atomic, IoError, Reader, Writer};
use crate::builder::{EmbeddingProvider, Embeddings, ProviderError};

const MAGIC: &[u8; 4] = b"EPGE";
const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementType {
    F16,
    F32,
}

impl ElementType {
    fn code(self) -> u8 {
        match self {
            ElementType::F16 => 1,
            ElementType::F32 => 2,
        }
    }

    fn from_code(c: u8) -> Result<Self, IoError> {
        match c {
            1 => Ok(ElementType::F16),
            2 => Ok(ElementType::F32),
            _ => Err(IoError::format(format!("unknown element type {c}"))),
        }
    }

    pub fn size(self) -> usize {
        match self {
            ElementType::F16 => 2,
            ElementType::F32 => 4,
        }
    }
}

/// Matrix of embeddings with one frame id per row.
///
/// Rows may share a frame id; raw per-patch feature dumps use that to group
/// the features of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    element: ElementType,
    dim: usize,
    frame_ids: Vec<String>,
    data: Vec<f32>,
}

impl EmbeddingFile {
    /// Half-precision files round their values on construction so that what
    /// is held in memory is exactly what gets written.
    pub fn new(element: ElementType, dim: usize, frame_ids: Vec<String>, mut data: Vec<f32>) -> Result<Self, IoError> {
        if dim == 0 {
            return Err(IoError::format("embedding dimension must be at least 1"));
        }
        if data.len() != frame_ids.len() * dim {
            return Err(IoError::format(format!(
                "{} rows of dimension {dim} need {} values, got {}",
                frame_ids.len(),
                frame_ids.len() * dim,
                data.len()
            )));
        }
        if element == ElementType::F16 {
            crate::vector::quantize_f16(&mut data);
        }
        Ok(Self { element, dim, frame_ids, data })
    }

    pub fn from_rows(element: ElementType, rows: Vec<(String, Vec<f32>)>) -> Result<Self, IoError> {
        let dim = rows.first().map_or(0, |r| r.1.len());
        let mut ids = Vec::with_capacity(rows.len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (id, row) in rows {
            if row.len() != dim {
                return Err(IoError::format(format!("row '{id}' has dimension {}, expected {dim}", row.len())));
            }
            ids.push(id);
            data.extend(row);
        }
        Self::new(element, dim, ids, data)
    }

    pub fn element(&self) -> ElementType {
        self.element
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.frame_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_ids.is_empty()
    }

    pub fn frame_ids(&self) -> &[String] {
        &self.frame_ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, &[f32])> + '_ {
        self.frame_ids.iter().map(String::as_str).zip(self.data.chunks_exact(self.dim))
    }

    /// Consecutive runs of rows sharing a frame id.
    pub fn groups(&self) -> Vec<(&str, std::ops::Range<usize>)> {
        let mut out: Vec<(&str, std::ops::Range<usize>)> = Vec::new();
        for (i, id) in self.frame_ids.iter().enumerate() {
            match out.last_mut() {
                Some((last, r)) if *last == id.as_str() => r.end = i + 1,
                _ => out.push((id.as_str(), i..i + 1)),
            }
        }
        out
    }

    /// Frame id → first row index.
    pub fn index(&self) -> HashMap<&str, usize> {
        let mut map = HashMap::with_capacity(self.len());
        for (i, id) in self.frame_ids.iter().enumerate() {
            map.entry(id.as_str()).or_insert(i);
        }
        map
    }

    pub fn encode(&self) -> Result<Vec<u8>, IoError> {
        let mut w = Writer::with_magic(MAGIC, VERSION);
        w.u8(self.element.code());
        w.u64(self.len() as u64);
        w.u32(u32::try_from(self.dim).map_err(|_| IoError::format("dimension too large"))?);
        for id in &self.frame_ids {
            w.u32(id.len() as u32);
            w.buf.extend_from_slice(id.as_bytes());
        }
        match self.element {
            ElementType::F16 => self.data.iter().for_each(|&v| w.f16(v)),
            ElementType::F32 => self.data.iter().for_each(|&v| w.f32(v)),
        }
        Ok(w.finish())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, IoError> {
        let (mut r, _) = Reader::open(bytes, MAGIC, &[VERSION])?;
        let element = ElementType::from_code(r.u8()?)?;
        let raw_rows = r.u64()?;
        let dim = r.u32()? as usize;
        let rows = r.count(raw_rows, 4)?;
        let mut ids = Vec::with_capacity(rows);
        for _ in 0..rows {
            ids.push(r.str32()?);
        }
        let n = rows.checked_mul(dim).ok_or(IoError::Truncated)?;
        if n.saturating_mul(element.size()) != r.remaining() {
            return Err(IoError::format(format!(
                "matrix section holds {} bytes, expected {}",
                r.remaining(),
                n.saturating_mul(element.size())
            )));
        }
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(match element {
                ElementType::F16 => r.f16()?,
                ElementType::F32 => r.f32()?,
            });
        }
        r.finish()?;
        if dim == 0 {
            return Err(IoError::format("embedding dimension must be at least 1"));
        }
        Ok(Self { element, dim, frame_ids: ids, data })
    }
}

pub fn save_embeddings(path: &Path, file: &EmbeddingFile) -> Result<(), IoError> {
    write_atomic(path, &file.encode()?)
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingFile, IoError> {
    EmbeddingFile::decode(&read_file(path)?).map_err(|e| e.in_file(path))
}

/// Precomputed embeddings served by frame id.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    semantic: EmbeddingFile,
    localization: EmbeddingFile,
    sem_index: HashMap<String, usize>,
    loc_index: HashMap<String, usize>,
}

impl EmbeddingTable {
    pub fn new(semantic: EmbeddingFile, localization: EmbeddingFile) -> Self {
        let own = |f: &EmbeddingFile| f.index().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        let sem_index = own(&semantic);
        let loc_index = own(&localization);
        Self { semantic, localization, sem_index, loc_index }
    }

    pub fn semantic_dim(&self) -> usize {
        self.semantic.dim()
    }

    pub fn localization_dim(&self) -> usize {
        self.localization.dim()
    }
}

impl EmbeddingProvider for EmbeddingTable {
    fn embed(&mut self, frame_id: &str) -> Result<Embeddings, ProviderError> {
        let s = self
            .sem_index
            .get(frame_id)
            .ok_or_else(|| ProviderError(format!("no semantic embedding for frame '{frame_id}'")))?;
        let l = self
            .loc_index
            .get(frame_id)
            .ok_or_else(|| ProviderError(format!("no localization embedding for frame '{frame_id}'")))?;
        Ok(Embeddings {
            semantic: self.semantic.row(*s).to_vec(),
            localization: self.localization.row(*l).to_vec(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(element: ElementType, rows: usize, dim: usize, seed: u64) -> EmbeddingFile {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ids = (0..rows).map(|i| format!("frame_{i:05}")).collect();
        let data = (0..rows * dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        EmbeddingFile::new(element, dim, ids, data).unwrap()
    }

    #[test]
    fn round_trip_both_precisions() {
        for element in [ElementType::F16, ElementType::F32] {
            let f = random(element, 37, 13, 4);
            let back = EmbeddingFile::decode(&f.encode().unwrap()).unwrap();
            assert_eq!(back, f);
            let bits: Vec<u32> = back.data.iter().map(|v| v.to_bits()).collect();
            let orig: Vec<u32> = f.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits, orig);
        }
    }

    #[test]
    fn every_flipped_byte_is_rejected() {
        let bytes = random(ElementType::F32, 3, 4, 1).encode().unwrap();
        for i in 0..bytes.len() {
            let mut bad = bytes.clone();
            bad[i] ^= 0x20;
            assert!(EmbeddingFile::decode(&bad).is_err(), "byte {i}");
        }
        for n in 0..bytes.len() {
            assert!(EmbeddingFile::decode(&bytes[..n]).is_err());
        }
    }

    #[test]
    fn shape_errors() {
        assert!(EmbeddingFile::new(ElementType::F32, 2, vec!["a".into()], vec![1.0]).is_err());
        assert!(EmbeddingFile::new(ElementType::F32, 0, vec![], vec![]).is_err());
        assert!(EmbeddingFile::from_rows(ElementType::F32, vec![("a".into(), vec![1.0]), ("b".into(), vec![1.0, 2.0])]).is_err());
    }

    #[test]
    fn groups_and_table() {
        let f = EmbeddingFile::from_rows(
            ElementType::F32,
            vec![("a".into(), vec![1.0]), ("a".into(), vec![2.0]), ("b".into(), vec![3.0])],
        )
        .unwrap();
        assert_eq!(f.groups(), vec![("a", 0..2), ("b", 2..3)]);
        let loc = EmbeddingFile::from_rows(ElementType::F32, vec![("b".into(), vec![0.0, 1.0])]).unwrap();
        let mut table = EmbeddingTable::new(f, loc);
        let e = table.embed("b").unwrap();
        assert_eq!(e.semantic, vec![3.0]);
        assert_eq!(e.localization, vec![0.0, 1.0]);
        assert!(table.embed("a").is_err());
    }
}
