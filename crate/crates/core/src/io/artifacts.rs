use std::path::Path;

use super::{read_file, write_atomic, IoError, Reader, Writer};
use crate::descriptor::{PcaTransform, VladVocabulary};

const VOCAB_MAGIC: &[u8; 4] = b"EPGV";
const PCA_MAGIC: &[u8; 4] = b"EPGP";
const VERSION: u16 = 1;

pub fn encode_vocabulary(v: &VladVocabulary) -> Vec<u8> {
    let mut w = Writer::with_magic(VOCAB_MAGIC, VERSION);
    w.u32(v.k() as u32);
    w.u32(v.dim() as u32);
    v.centroids().iter().for_each(|&c| w.f64(c));
    w.finish()
}

pub fn decode_vocabulary(bytes: &[u8]) -> Result<VladVocabulary, IoError> {
    let (mut r, _) = Reader::open(bytes, VOCAB_MAGIC, &[VERSION])?;
    let k = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let n = r.count((k as u64).saturating_mul(dim as u64), 8)?;
    let c = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
    r.finish()?;
    VladVocabulary::new(k, dim, c).map_err(|e| IoError::format(e.to_string()))
}

pub fn encode_pca(t: &PcaTransform) -> Vec<u8> {
    let mut w = Writer::with_magic(PCA_MAGIC, VERSION);
    w.u32(t.input_dim() as u32);
    w.u32(t.components() as u32);
    t.mean().iter().for_each(|&c| w.f64(c));
    t.basis().iter().for_each(|&c| w.f64(c));
    w.finish()
}

pub fn decode_pca(bytes: &[u8]) -> Result<PcaTransform, IoError> {
    let (mut r, _) = Reader::open(bytes, PCA_MAGIC, &[VERSION])?;
    let d = r.u32()? as usize;
    let c = r.u32()? as usize;
    let nm = r.count(d as u64, 8)?;
    let mean = (0..nm).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
    let nb = r.count((d as u64).saturating_mul(c as u64), 8)?;
    let basis = (0..nb).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
    r.finish()?;
    PcaTransform::new(mean, basis, c).map_err(|e| IoError::format(e.to_string()))
}

pub fn save_vocabulary(path: &Path, v: &VladVocabulary) -> Result<(), IoError> {
    write_atomic(path, &encode_vocabulary(v))
}

pub fn load_vocabulary(path: &Path) -> Result<VladVocabulary, IoError> {
    decode_vocabulary(&read_file(path)?).map_err(|e| e.in_file(path))
}

pub fn save_pca(path: &Path, t: &PcaTransform) -> Result<(), IoError> {
    write_atomic(path, &encode_pca(t))
}

pub fn load_pca(path: &Path) -> Result<PcaTransform, IoError> {
    decode_pca(&read_file(path)?).map_err(|e| e.in_file(path))
}
