//! Deterministic inputs for the kernel benchmarks.

use std::f64::consts::PI;

use epg_core::builder::{Epg, EpgNode};
use epg_core::descriptor::{FeatureSet, VladVocabulary};
use epg_core::eval::Point;
use epg_core::grid::{pose_key, GridParams, Pose};
use epg_core::reloc::{SceneIndex, Vote};
use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_pose(rng: &mut ChaCha8Rng, extent: f64) -> Pose {
    let p = Vector3::new(rng.random_range(-extent..extent), rng.random_range(-extent..extent), rng.random_range(0.0..3.0));
    Pose::looking(p, rng.random_range(-PI..PI), rng.random_range(-1.2..1.2), rng.random_range(-0.3..0.3))
}

pub fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Graph of `nodes` distinct cells with random unit embeddings.
pub fn random_graph(nodes: usize, semantic_dim: usize, localization_dim: usize, seed: u64) -> Epg {
    let mut rng = rng(seed);
    let params = GridParams::indoor();
    let extent = (nodes as f64).cbrt() * 2.0 + 2.0;
    let mut seen = std::collections::HashSet::new();
    let mut list = Vec::with_capacity(nodes);
    while list.len() < nodes {
        let pose = random_pose(&mut rng, extent);
        let key = pose_key(&pose, &params).unwrap();
        if !seen.insert(key) {
            continue;
        }
        let idx = list.len();
        list.push(EpgNode {
            key,
            pose,
            timestamp: idx as f64,
            frame_id: format!("f{idx:07}"),
            semantic: unit_vector(&mut rng, semantic_dim),
            localization: unit_vector(&mut rng, localization_dim),
            insertion_index: idx,
            score: 0.0,
        });
    }
    Epg::from_parts(params, semantic_dim, localization_dim, list, vec![0]).unwrap()
}

/// `n` votes, a third of them clustered around one pose.
pub fn votes(n: usize, seed: u64) -> Vec<Vote> {
    let mut rng = rng(seed);
    let center = random_pose(&mut rng, 1.0);
    (0..n)
        .map(|i| {
            let pose = if i % 3 == 0 {
                let d = Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
                Pose { translation: center.translation + d, ..center }
            } else {
                random_pose(&mut rng, 10.0)
            };
            Vote { pose, bundle_index: i / 5, rank: i % 5, similarity: 0.5 }
        })
        .collect()
}

pub fn features(rows: usize, dim: usize, seed: u64) -> FeatureSet {
    let mut rng = rng(seed);
    FeatureSet::new(dim, (0..rows * dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn vocabulary(k: usize, dim: usize, seed: u64) -> VladVocabulary {
    let mut rng = rng(seed);
    VladVocabulary::new(k, dim, (0..k * dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Room-like cloud: floor, two walls and a sphere shell, plus a camera cloud
/// copied from it and an initial pose a few degrees and centimeters off.
pub fn icp_problem(points: usize, seed: u64) -> (SceneIndex, Vec<Point>, Pose) {
    let mut rng = rng(seed);
    let mut cloud = Vec::with_capacity(points);
    for i in 0..points {
        let (a, b) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        cloud.push(match i % 4 {
            0 => Vector3::new(a, b, -1.0),
            1 => Vector3::new(-1.0, a, b),
            2 => Vector3::new(a, 1.0, b),
            _ => {
                let (t, p) = (a * PI, b * PI / 2.0);
                Vector3::new(0.3 * p.cos() * t.cos(), 0.3 * p.cos() * t.sin(), 0.3 * p.sin())
            }
        });
    }
    let initial = Pose::from_quaternion(&UnitQuaternion::from_euler_angles(0.05, -0.04, 0.08), Vector3::new(0.05, -0.03, 0.04));
    (SceneIndex::new(cloud.clone()), cloud, initial)
}
