//! Frustum visibility, the view redundancy index and the Recall@K harness.

use std::fmt::Write as _;

use nalgebra::Vector3;
use rayon::prelude::*;
use thiserror::Error;

use crate::builder::Epg;
use crate::grid::Pose;

pub type Point = Vector3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("{estimates} estimate lists for {truths} ground-truth poses")]
    CountMismatch { estimates: usize, truths: usize },
    #[error("graph is empty")]
    EmptyGraph,
    #[error("invalid intrinsics: {0}")]
    Intrinsics(String),
}

/// Pinhole camera model with a range cutoff.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub max_range: f64,
}

impl Intrinsics {
    /// 640×480 RGB-D camera with a 10 m range.
    pub fn indoor() -> Self {
        Self { fx: 577.87, fy: 577.87, cx: 319.5, cy: 239.5, width: 640, height: 480, max_range: 10.0 }
    }

    /// Wide automotive camera with an 80 m range.
    pub fn outdoor() -> Self {
        Self { fx: 718.856, fy: 718.856, cx: 607.19, cy: 185.22, width: 1241, height: 376, max_range: 80.0 }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(EvalError::Intrinsics("focal lengths must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(EvalError::Intrinsics("image size must be positive".into()));
        }
        if !(self.max_range > 0.0) {
            return Err(EvalError::Intrinsics("max_range must be positive".into()));
        }
        Ok(())
    }

    /// Horizontal field of view in radians.
    pub fn horizontal_fov(&self) -> f64 {
        2.0 * (self.width as f64 / (2.0 * self.fx)).atan()
    }

    /// Projects a camera-frame point; `None` if it is outside the frustum.
    pub fn project(&self, p: &Point) -> Option<(f64, f64)> {
        if !(p.z > 0.0 && p.z <= self.max_range) {
            return None;
        }
        let u = self.fx * p.x / p.z + self.cx;
        let v = self.fy * p.y / p.z + self.cy;
        if u >= 0.0 && u < self.width as f64 && v >= 0.0 && v < self.height as f64 {
            Some((u, v))
        } else {
            None
        }
    }
}

/// Indices (ascending) of the scene points inside the camera frustum. No
/// occlusion test is made.
pub fn visible_points(pose: &Pose, cam: &Intrinsics, scene: &[Point]) -> Vec<usize> {
    let rt = pose.rotation_matrix().transpose();
    scene
        .iter()
        .enumerate()
        .filter(|(_, p)| cam.project(&(rt * (*p - pose.translation))).is_some())
        .map(|(i, _)| i)
        .collect()
}

/// Intersection over union of two ascending index sets; 0 when both are empty.
pub fn iou(a: &[usize], b: &[usize]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    inter as f64 / (a.len() + b.len() - inter) as f64
}

/// Average number of other views whose visible-point IoU exceeds `o` percent.
pub fn redundancy_index(epg: &Epg, cam: &Intrinsics, scene: &[Point], o: f64) -> Result<f64, EvalError> {
    if epg.is_empty() {
        return Err(EvalError::EmptyGraph);
    }
    let poses: Vec<Pose> = epg.nodes().map(|n| n.pose).collect();
    Ok(redundancy_of_poses(&poses, cam, scene, &[o])?[0])
}

/// Redundancy indices of a pose set for several overlap percentages at once.
pub fn redundancy_of_poses(poses: &[Pose], cam: &Intrinsics, scene: &[Point], percents: &[f64]) -> Result<Vec<f64>, EvalError> {
    cam.validate()?;
    if poses.is_empty() {
        return Err(EvalError::EmptyGraph);
    }
    let sets: Vec<Vec<usize>> = poses.par_iter().map(|p| visible_points(p, cam, scene)).collect();
    let n = sets.len();
    let counts: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|a| {
            let mut c = vec![0usize; percents.len()];
            for b in a + 1..n {
                let o = iou(&sets[a], &sets[b]);
                for (ci, p) in c.iter_mut().zip(percents) {
                    if o > p / 100.0 {
                        *ci += 1;
                    }
                }
            }
            c
        })
        .collect();
    Ok((0..percents.len())
        .map(|pi| 2.0 * counts.iter().map(|c| c[pi]).sum::<usize>() as f64 / n as f64)
        .collect())
}

/// Positional and angular success radii.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecallThresholds {
    pub d_xyz: f64,
    /// Maximum angle between forward directions, radians.
    pub d_ang: f64,
}

impl RecallThresholds {
    pub fn indoor_coarse() -> Self {
        Self { d_xyz: 0.8, d_ang: 30f64.to_radians() }
    }
    pub fn indoor_fine() -> Self {
        Self { d_xyz: 0.3, d_ang: 15f64.to_radians() }
    }
    pub fn outdoor_coarse() -> Self {
        Self { d_xyz: 15.0, d_ang: 30f64.to_radians() }
    }
    pub fn outdoor_fine() -> Self {
        Self { d_xyz: 3.0, d_ang: 15f64.to_radians() }
    }
}

/// Angle between the forward axes of two poses.
pub fn forward_angle(a: &Pose, b: &Pose) -> f64 {
    let fa = a.forward().normalize();
    let fb = b.forward().normalize();
    fa.dot(&fb).clamp(-1.0, 1.0).acos()
}

pub fn within(est: &Pose, truth: &Pose, thr: &RecallThresholds) -> bool {
    (est.translation - truth.translation).norm() <= thr.d_xyz && forward_angle(est, truth) <= thr.d_ang
}

/// Percentage of queries with at least one of the first `k` estimates inside
/// the thresholds.
pub fn recall_at_k(estimates: &[Vec<Pose>], truths: &[Pose], k: usize, thr: &RecallThresholds) -> Result<f64, EvalError> {
    if estimates.len() != truths.len() {
        return Err(EvalError::CountMismatch { estimates: estimates.len(), truths: truths.len() });
    }
    if truths.is_empty() {
        return Ok(0.0);
    }
    let hits = estimates
        .iter()
        .zip(truths)
        .filter(|(est, t)| est.iter().take(k).any(|e| within(e, t, thr)))
        .count();
    Ok(100.0 * hits as f64 / truths.len() as f64)
}

/// Query selection: drop queries with no graph node inside the coarse
/// thresholds, then greedily keep (in trajectory order) those that differ from
/// every kept query by at least `dedupe_dist` or `dedupe_ang`. Returns the
/// indices of kept queries.
pub fn filter_queries(queries: &[Pose], epg: &Epg, coarse: &RecallThresholds, dedupe_dist: f64, dedupe_ang: f64) -> Vec<usize> {
    let nodes: Vec<Pose> = epg.nodes().map(|n| n.pose).collect();
    let mut kept: Vec<usize> = Vec::new();
    for (qi, q) in queries.iter().enumerate() {
        if !nodes.iter().any(|n| within(n, q, coarse)) {
            continue;
        }
        let distinct = kept.iter().all(|&k| {
            let other = &queries[k];
            (other.translation - q.translation).norm() >= dedupe_dist || forward_angle(other, q) >= dedupe_ang
        });
        if distinct {
            kept.push(qi);
        }
    }
    kept
}

/// One row of a recall report.
#[derive(Debug, Clone, PartialEq)]
pub struct RecallRow {
    pub method: String,
    pub coarse_r1: f64,
    pub coarse_r5: f64,
    pub fine_r1: f64,
    pub fine_r5: f64,
}

impl RecallRow {
    pub fn compute(method: &str, estimates: &[Vec<Pose>], truths: &[Pose], coarse: &RecallThresholds, fine: &RecallThresholds) -> Result<Self, EvalError> {
        Ok(Self {
            method: method.to_string(),
            coarse_r1: recall_at_k(estimates, truths, 1, coarse)?,
            coarse_r5: recall_at_k(estimates, truths, 5, coarse)?,
            fine_r1: recall_at_k(estimates, truths, 1, fine)?,
            fine_r5: recall_at_k(estimates, truths, 5, fine)?,
        })
    }
}

/// Recall table over {coarse, fine} × {R@1, R@5}, optionally with the
/// redundancy indices of the graph.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RecallReport {
    pub rows: Vec<RecallRow>,
    pub queries: usize,
    /// (R_50, R_25)
    pub redundancy: Option<(f64, f64)>,
}

pub const RECALL_COLUMNS: [&str; 4] = ["coarse R@1", "coarse R@5", "fine R@1", "fine R@5"];

impl RecallReport {
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let width = self.rows.iter().map(|r| r.method.len()).max().unwrap_or(6).max(6);
        let _ = write!(s, "{:<width$}", "method");
        for c in RECALL_COLUMNS {
            let _ = write!(s, " {c:>10}");
        }
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<width$} {:>10.1} {:>10.1} {:>10.1} {:>10.1}",
                r.method, r.coarse_r1, r.coarse_r5, r.fine_r1, r.fine_r5
            );
        }
        let _ = writeln!(s, "queries: {}", self.queries);
        if let Some((r50, r25)) = self.redundancy {
            let _ = writeln!(s, "R_50 {r50:.2}  R_25 {r25:.2}");
        }
        s
    }

    /// Long form: one row per method × threshold × K.
    pub fn to_long_csv(&self) -> String {
        let mut s = String::from("method,threshold,k,recall\n");
        for r in &self.rows {
            for (thr, k, v) in [
                ("coarse", 1, r.coarse_r1),
                ("coarse", 5, r.coarse_r5),
                ("fine", 1, r.fine_r1),
                ("fine", 5, r.fine_r5),
            ] {
                let _ = writeln!(s, "{},{thr},{k},{v:.3}", r.method);
            }
        }
        if let Some((r50, r25)) = self.redundancy {
            let _ = writeln!(s, "redundancy,R50,,{r50:.4}");
            let _ = writeln!(s, "redundancy,R25,,{r25:.4}");
        }
        s
    }
}
