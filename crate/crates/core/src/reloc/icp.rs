//! Point-to-point ICP with closed-form SVD updates.

use nalgebra::{Matrix3, Vector3};

use super::kdtree::KdTree;
use crate::eval::Point;
use crate::grid::Pose;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpConfig {
    /// Correspondence gate in meters.
    pub max_dist: f64,
    pub max_iterations: usize,
    /// Stop once the update moves less than this (meters)...
    pub translation_tol: f64,
    /// ...and rotates less than this (radians).
    pub rotation_tol: f64,
    /// Local points used per iteration; the cloud is strided down to this.
    pub max_points: Option<usize>,
}

impl IcpConfig {
    /// Defaults for a grid of spatial resolution `dl`: gate `2·dl`.
    pub fn for_cell_size(dl: f64) -> Self {
        Self {
            max_dist: 2.0 * dl,
            max_iterations: 30,
            translation_tol: 1e-4,
            rotation_tol: 0.01f64.to_radians(),
            max_points: None,
        }
    }
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self::for_cell_size(0.4)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpResult {
    pub pose: Pose,
    /// Inlier RMSE at the returned pose; infinite when nothing matched.
    pub rmse: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// World-frame scene prepared for repeated registration.
#[derive(Debug, Clone)]
pub struct SceneIndex {
    tree: KdTree,
}

impl SceneIndex {
    pub fn new(scene: Vec<Point>) -> Self {
        Self { tree: KdTree::new(scene) }
    }

    pub fn is_empty(&self) -> bool {
        self.tree.is_empty()
    }

    pub fn len(&self) -> usize {
        self.tree.len()
    }

    pub fn points(&self) -> &[Point] {
        self.tree.points()
    }

    pub fn nearest_within(&self, q: &Point, max_dist: f64) -> Option<(usize, f64)> {
        self.tree.nearest_within(q, max_dist)
    }
}

/// Rigid transform minimizing `Σ‖R·src + t − dst‖²` (Kabsch).
pub fn kabsch(src: &[Point], dst: &[Point]) -> Option<Pose> {
    if src.len() != dst.len() || src.len() < 3 {
        return None;
    }
    let n = src.len() as f64;
    let cs: Vector3<f64> = src.iter().sum::<Vector3<f64>>() / n;
    let cd: Vector3<f64> = dst.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s - cs) * (d - cd).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u?;
    let v_t = svd.v_t?;
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    Some(Pose::new(r, cd - r * cs))
}

fn subsample(cloud: &[Point], max_points: Option<usize>) -> Vec<Point> {
    match max_points {
        Some(m) if m > 0 && cloud.len() > m => {
            let stride = cloud.len() as f64 / m as f64;
            (0..m).map(|i| cloud[(i as f64 * stride) as usize]).collect()
        }
        _ => cloud.to_vec(),
    }
}

fn correspondences(pose: &Pose, local: &[Point], scene: &SceneIndex, max_dist: f64) -> (Vec<Point>, Vec<Point>, f64) {
    let mut src = Vec::with_capacity(local.len());
    let mut dst = Vec::with_capacity(local.len());
    let mut sq = 0.0;
    let r = pose.rotation_matrix();
    for p in local {
        let w = r * p + pose.translation;
        if let Some((idx, d2)) = scene.nearest_within(&w, max_dist) {
            src.push(w);
            dst.push(scene.points()[idx]);
            sq += d2;
        }
    }
    (src, dst, sq)
}

/// Refines the world pose of a camera whose points (camera frame) are
/// `local`. With no correspondence at the first iteration the initial pose is
/// returned unconverged.
pub fn icp_refine(initial: &Pose, local: &[Point], scene: &SceneIndex, cfg: &IcpConfig) -> IcpResult {
    let fail = IcpResult { pose: *initial, rmse: f64::INFINITY, converged: false, iterations: 0 };
    if local.is_empty() || scene.is_empty() {
        return fail;
    }
    let local = subsample(local, cfg.max_points);
    let mut pose = *initial;
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..cfg.max_iterations {
        let (src, dst, _) = correspondences(&pose, &local, scene, cfg.max_dist);
        let Some(delta) = kabsch(&src, &dst) else {
            if it == 0 {
                return fail;
            }
            break;
        };
        pose = delta.compose(&pose);
        iterations = it + 1;
        let angle = delta.rotation.angle();
        if delta.translation.norm() < cfg.translation_tol && angle < cfg.rotation_tol {
            converged = true;
            break;
        }
    }
    let (src, _, sq) = correspondences(&pose, &local, scene, cfg.max_dist);
    let rmse = if src.is_empty() { f64::INFINITY } else { (sq / src.len() as f64).sqrt() };
    IcpResult { pose, rmse, converged, iterations }
}
