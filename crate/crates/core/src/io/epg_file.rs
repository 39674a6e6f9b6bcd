use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use super::{read_file, write_atomic, IoError, Reader, Writer};
use crate::builder::{Epg, EpgNode};
use crate::grid::{pose_key, GridParams, Pose, PoseKey};

const MAGIC: &[u8; 4] = b"EPGG";
const VERSION: u16 = 1;

/// Bytes per node record excluding the frame id and embedding rows: key,
/// pose, timestamp, id length, insertion index and score.
pub const NODE_FIXED_BYTES: usize = 5 * 4 + 7 * 8 + 8 + 2 + 8 + 8;

pub fn encode_epg(epg: &Epg) -> Result<Vec<u8>, IoError> {
    let p = epg.params();
    let mut w = Writer::with_magic(MAGIC, VERSION);
    w.f64(p.dl);
    w.f64(p.d_theta);
    w.f64(p.d_phi);
    w.u32(epg.semantic_dim() as u32);
    w.u32(epg.localization_dim() as u32);
    w.u64(epg.len() as u64);
    w.u32(epg.session_boundaries().len() as u32);
    for &b in epg.session_boundaries() {
        w.u64(b as u64);
    }
    for n in epg.nodes() {
        for v in [n.key.i, n.key.j, n.key.k, n.key.l, n.key.m] {
            w.i32(v);
        }
        let q = n.pose.rotation;
        for v in [q.i, q.j, q.k, q.w] {
            w.f64(v);
        }
        for c in 0..3 {
            w.f64(n.pose.translation[c]);
        }
        w.f64(n.timestamp);
        w.str16(&n.frame_id)?;
        w.u64(n.insertion_index as u64);
        w.f64(n.score);
        for &v in &n.semantic {
            w.f16(v);
        }
        for &v in &n.localization {
            w.f32(v);
        }
    }
    Ok(w.finish())
}

pub fn decode_epg(bytes: &[u8]) -> Result<Epg, IoError> {
    let (mut r, _) = Reader::open(bytes, MAGIC, &[VERSION])?;
    let params = GridParams { dl: r.f64()?, d_theta: r.f64()?, d_phi: r.f64()? };
    params.validate().map_err(|e| IoError::format(e.to_string()))?;
    let sem_dim = r.u32()? as usize;
    let loc_dim = r.u32()? as usize;
    let raw_count = r.u64()?;
    let raw_boundaries = r.u32()?;
    let nb = r.count(raw_boundaries as u64, 8)?;
    let mut boundaries = Vec::with_capacity(nb);
    for _ in 0..nb {
        boundaries.push(usize::try_from(r.u64()?).map_err(|_| IoError::format("session boundary out of range"))?);
    }
    let count = r.count(raw_count, NODE_FIXED_BYTES + sem_dim * 2 + loc_dim * 4)?;
    let mut nodes = Vec::with_capacity(count);
    for idx in 0..count {
        let key = PoseKey::new(r.i32()?, r.i32()?, r.i32()?, r.i32()?, r.i32()?);
        let (qi, qj, qk, qw) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
        let q = Quaternion::new(qw, qi, qj, qk);
        if !q.coords.iter().all(|v| v.is_finite()) || (q.norm() - 1.0).abs() > 1e-6 {
            return Err(IoError::format(format!("node {idx}: stored rotation is not a unit quaternion")));
        }
        let t = Vector3::new(r.f64()?, r.f64()?, r.f64()?);
        let pose = Pose::from_quaternion(&UnitQuaternion::new_unchecked(q), t);
        let timestamp = r.f64()?;
        let frame_id = r.str16()?;
        let insertion_index = r.u64()? as usize;
        let score = r.f64()?;
        let semantic = (0..sem_dim).map(|_| r.f16()).collect::<Result<Vec<_>, _>>()?;
        let localization = (0..loc_dim).map(|_| r.f32()).collect::<Result<Vec<_>, _>>()?;
        match pose_key(&pose, &params) {
            Ok(k) if k == key => {}
            _ => return Err(IoError::format(format!("node {idx} ('{frame_id}'): stored key {key} does not match its pose"))),
        }
        nodes.push(EpgNode { key, pose, timestamp, frame_id, semantic, localization, insertion_index, score });
    }
    r.finish()?;
    Epg::from_parts(params, sem_dim, loc_dim, nodes, boundaries).map_err(IoError::Format)
}

pub fn save_epg(path: &Path, epg: &Epg) -> Result<(), IoError> {
    write_atomic(path, &encode_epg(epg)?)
}

pub fn load_epg(path: &Path) -> Result<Epg, IoError> {
    decode_epg(&read_file(path)?).map_err(|e| e.in_file(path))
}
