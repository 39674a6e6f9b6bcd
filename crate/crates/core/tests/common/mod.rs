//! Random instances and brute-force reference implementations shared by the
//! integration tests.
#![allow(dead_code)]

use std::collections::HashMap;
use std::f64::consts::PI;

use epg_core::builder::{Embeddings, Frame, ProviderError};
use epg_core::grid::{pose_key, view_angles, wrap_angle, GridParams, Pose, PoseKey};
use epg_core::reloc::Vote;
use nalgebra::Vector3;
use rand::Rng;

pub fn random_pose<R: Rng>(rng: &mut R, extent: f64) -> Pose {
    let p = Vector3::new(
        rng.random_range(-extent..extent),
        rng.random_range(-extent..extent),
        rng.random_range(-extent..extent),
    );
    Pose::looking(p, rng.random_range(-PI..PI), rng.random_range(-PI / 2.0..PI / 2.0), rng.random_range(-PI..PI))
}

/// Random walk with jittered heading, split into sessions whose clocks
/// restart. Timestamps may repeat within a session.
pub fn random_stream<R: Rng>(rng: &mut R, frames: usize, sessions: usize) -> Vec<Vec<Frame>> {
    let mut out = Vec::with_capacity(sessions);
    let per = frames.div_ceil(sessions.max(1));
    let mut id = 0;
    for _ in 0..sessions.max(1) {
        let mut pos = Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), 1.0);
        let (mut yaw, mut pitch) = (rng.random_range(-PI..PI), 0.0f64);
        let mut t = rng.random_range(0.0..5.0);
        let step = rng.random_range(0.02..0.3);
        let mut s = Vec::with_capacity(per);
        for _ in 0..per.min(frames - id) {
            yaw = wrap_angle(yaw + rng.random_range(-0.3..0.3));
            pitch = (pitch + rng.random_range(-0.15..0.15)).clamp(-1.4, 1.4);
            pos += Vector3::new(yaw.cos(), yaw.sin(), rng.random_range(-0.3..0.3)) * step;
            pos.z = pos.z.clamp(-1.0, 3.0);
            if rng.random_bool(0.02) {
                pos = Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), 1.0);
            }
            t += if rng.random_bool(0.05) { 0.0 } else { rng.random_range(0.01..1.5) };
            s.push(Frame::new(t, Pose::looking(pos, yaw, pitch, rng.random_range(-0.2..0.2)), format!("f{id:06}")));
            id += 1;
        }
        out.push(s);
    }
    out
}

/// Deterministic per-frame embeddings that count calls.
pub struct CountingProvider {
    pub calls: usize,
    pub semantic_dim: usize,
    pub localization_dim: usize,
}

impl CountingProvider {
    pub fn new(semantic_dim: usize, localization_dim: usize) -> Self {
        Self { calls: 0, semantic_dim, localization_dim }
    }
}

fn hashed(id: &str, salt: u64, dim: usize) -> Vec<f32> {
    let mut h = salt ^ 0x9e37_79b9_7f4a_7c15;
    for b in id.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
    }
    (0..dim)
        .map(|i| {
            let x = h.wrapping_add(i as u64).wrapping_mul(0x2545_f491_4f6c_dd1d);
            ((x >> 40) as f32 / (1u64 << 24) as f32) - 0.5
        })
        .collect()
}

impl epg_core::builder::EmbeddingProvider for CountingProvider {
    fn embed(&mut self, frame_id: &str) -> Result<Embeddings, ProviderError> {
        self.calls += 1;
        Ok(Embeddings {
            semantic: hashed(frame_id, 1, self.semantic_dim),
            localization: hashed(frame_id, 2, self.localization_dim),
        })
    }
}

/// Centering score written out from its definition.
fn reference_score(pose: &Pose, key: &PoseKey, p: &GridParams) -> f64 {
    let center = Vector3::new(key.i as f64 + 0.5, key.j as f64 + 0.5, key.k as f64 + 0.5) * p.dl;
    let a = view_angles(pose);
    let phi_c = (key.l as f64 + 0.5) * p.d_phi;
    let mut s = (pose.translation - center).norm() / p.dl + (a.phi - phi_c).abs() / p.d_phi;
    if !p.is_cap_ring(key.l) {
        let w = p.d_theta * ((key.l as f64 + 0.5) * p.d_phi).cos();
        let theta_c = (key.m as f64 + 0.5) * w;
        s += wrap_angle(a.theta - theta_c).abs() / w;
    }
    -s
}

pub struct OracleResult {
    /// Committed keys and frame ids in final commit order.
    pub nodes: Vec<(PoseKey, String)>,
    pub visits: usize,
    pub commits: usize,
}

/// Two-pass replay: first split every session into visits (runs of equal
/// key), then apply the suppression and replacement rules visit by visit.
pub fn replay_oracle(sessions: &[Vec<Frame>], p: &GridParams, revisit_window: f64) -> OracleResult {
    struct V {
        key: PoseKey,
        entry: f64,
        exit: f64,
        best: String,
        score: f64,
    }
    let mut visits: Vec<V> = Vec::new();
    for s in sessions {
        let run_start = visits.len();
        for f in s {
            let key = pose_key(&f.pose, p).unwrap();
            let score = reference_score(&f.pose, &key, p);
            let same = visits.len() > run_start && visits.last().unwrap().key == key;
            if same {
                let v = visits.last_mut().unwrap();
                v.exit = f.timestamp;
                if score > v.score {
                    v.score = score;
                    v.best = f.frame_id.clone();
                }
            } else {
                visits.push(V { key, entry: f.timestamp, exit: f.timestamp, best: f.frame_id.clone(), score });
            }
        }
    }

    let mut stored: HashMap<PoseKey, (String, f64, f64)> = HashMap::new();
    let mut order: Vec<PoseKey> = Vec::new();
    let mut commits = 0;
    for v in &visits {
        if let Some((_, score, last)) = stored.get(&v.key) {
            let gap = v.entry - last;
            if (0.0..revisit_window).contains(&gap) || v.score <= *score {
                continue;
            }
        }
        order.retain(|k| *k != v.key);
        order.push(v.key);
        stored.insert(v.key, (v.best.clone(), v.score, v.exit));
        commits += 1;
    }
    OracleResult {
        nodes: order.iter().map(|k| (*k, stored[k].0.clone())).collect(),
        visits: visits.len(),
        commits,
    }
}

/// VLAD by explicit loops over features, centroids and coordinates.
pub fn naive_vlad(features: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<f64> {
    let k = centroids.len();
    let d = centroids[0].len();
    let mut blocks = vec![vec![0.0; d]; k];
    for f in features {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (c, cent) in centroids.iter().enumerate() {
            let mut s = 0.0;
            for j in 0..d {
                s += (f[j] - cent[j]) * (f[j] - cent[j]);
            }
            if s < best_d {
                best_d = s;
                best = c;
            }
        }
        for j in 0..d {
            blocks[best][j] += f[j] - centroids[best][j];
        }
    }
    let mut out = Vec::with_capacity(k * d);
    for b in &blocks {
        let n = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in b {
            out.push(if n > 0.0 { x / n } else { 0.0 });
        }
    }
    let n = out.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        for x in &mut out {
            *x /= n;
        }
    }
    out
}

/// Vote scores by the double loop over all pairs; returns the winner index
/// (ties to the lowest (bundle index, rank)) and every score.
pub fn brute_vote(votes: &[Vote], sigma_xyz: f64, sigma_ang: f64) -> (usize, Vec<f64>) {
    let mut scores = Vec::with_capacity(votes.len());
    for v in votes {
        let av = view_angles(&v.pose);
        let mut s = 0.0;
        for w in votes {
            let aw = view_angles(&w.pose);
            let dt = (v.pose.translation - w.pose.translation).norm_squared();
            let dth = wrap_angle(av.theta - aw.theta);
            let dph = av.phi - aw.phi;
            s += (-dt / (2.0 * sigma_xyz * sigma_xyz) - (dth * dth + dph * dph) / (2.0 * sigma_ang * sigma_ang)).exp();
        }
        scores.push(s);
    }
    let mut best = 0;
    for i in 1..votes.len() {
        let better = scores[i] > scores[best]
            || (scores[i] == scores[best] && (votes[i].bundle_index, votes[i].rank) < (votes[best].bundle_index, votes[best].rank));
        if better {
            best = i;
        }
    }
    (best, scores)
}
