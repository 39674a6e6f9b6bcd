//! Bundle re-localization.
//!
//! Each pose of a short odometry bundle retrieves its best matching graph
//! nodes. Every candidate is transported to the bundle's middle pose through
//! the relative odometry and becomes a vote; the vote with the largest sum of
//! Gaussians over all votes in (x, y, z, θ, φ) is the estimate. Candidates can
//! optionally be refined against a scene cloud with ICP first.

mod icp;
mod kdtree;

use rayon::prelude::*;
use thiserror::Error;

pub use icp::{icp_refine, kabsch, IcpConfig, IcpResult, SceneIndex};
pub use kdtree::KdTree;

use crate::builder::Epg;
use crate::eval::Point;
use crate::grid::{view_angles, wrap_angle, Pose, PoseKey};
use crate::query::{top_k, Field, QueryError};

pub const DEFAULT_BUNDLE_SIZE: usize = 15;
pub const DEFAULT_CANDIDATES: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RelocError {
    #[error("bundle is empty")]
    EmptyBundle,
    #[error("bundle has {poses} poses but {queries} query vectors")]
    BundleMismatch { poses: usize, queries: usize },
    #[error("no votes to aggregate")]
    NoVotes,
    #[error("vote parameters must be positive and finite")]
    InvalidParams,
    #[error("ICP refinement needs a non-empty scene cloud")]
    MissingScene,
    #[error("expected {expected} depth clouds, got {got}")]
    CloudCountMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Query(#[from] QueryError),
}

/// Successive odometry poses in a shared local frame with one localization
/// query per pose.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    poses: Vec<Pose>,
    queries: Vec<Vec<f32>>,
}

impl Bundle {
    pub fn new(poses: Vec<Pose>, queries: Vec<Vec<f32>>) -> Result<Self, RelocError> {
        if poses.len() != queries.len() {
            return Err(RelocError::BundleMismatch { poses: poses.len(), queries: queries.len() });
        }
        if poses.is_empty() {
            return Err(RelocError::EmptyBundle);
        }
        Ok(Self { poses, queries })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn queries(&self) -> &[Vec<f32>] {
        &self.queries
    }

    pub fn mid_index(&self) -> usize {
        self.poses.len() / 2
    }

    /// Transform taking pose `i` to the middle pose, `P_i⁻¹ ∘ P_mid`.
    pub fn to_mid(&self, i: usize) -> Pose {
        self.poses[i].inverse().compose(&self.poses[self.mid_index()])
    }
}

/// A retrieved world pose hypothesis for one bundle pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub pose: Pose,
    pub similarity: f64,
    pub key: Option<PoseKey>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vote {
    /// Hypothesis for the middle pose.
    pub pose: Pose,
    pub bundle_index: usize,
    pub rank: usize,
    pub similarity: f64,
}

impl Vote {
    fn source(&self) -> (usize, usize) {
        (self.bundle_index, self.rank)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoteParams {
    pub sigma_xyz: f64,
    pub sigma_ang: f64,
    /// Scale each vote's contribution by its similarity.
    pub weight_by_similarity: bool,
}

impl VoteParams {
    pub fn indoor() -> Self {
        Self { sigma_xyz: 0.45, sigma_ang: 20f64.to_radians(), weight_by_similarity: false }
    }

    pub fn outdoor() -> Self {
        Self { sigma_xyz: 2.2, ..Self::indoor() }
    }

    pub fn validate(&self) -> Result<(), RelocError> {
        let ok = |s: f64| s.is_finite() && s > 0.0;
        if ok(self.sigma_xyz) && ok(self.sigma_ang) {
            Ok(())
        } else {
            Err(RelocError::InvalidParams)
        }
    }
}

impl Default for VoteParams {
    fn default() -> Self {
        Self::indoor()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelocEstimate {
    pub pose: Pose,
    pub score: f64,
    pub winning_vote: Vote,
}

/// Transports every candidate to the middle pose: `C ∘ (P_i⁻¹ ∘ P_mid)`.
pub fn realign_votes(bundle: &Bundle, candidates: &[Vec<Candidate>]) -> Vec<Vote> {
    let mut votes = Vec::new();
    for (i, cands) in candidates.iter().enumerate().take(bundle.len()) {
        let rel = bundle.to_mid(i);
        for (rank, c) in cands.iter().enumerate() {
            votes.push(Vote { pose: c.pose.compose(&rel), bundle_index: i, rank, similarity: c.similarity });
        }
    }
    votes
}

/// Kernel value between two votes given their precomputed angles.
fn kernel(a: &(Pose, f64, f64), b: &(Pose, f64, f64), inv_xyz: f64, inv_ang: f64) -> f64 {
    let d2 = (a.0.translation - b.0.translation).norm_squared();
    let dt = wrap_angle(a.1 - b.1);
    let dp = a.2 - b.2;
    (-d2 * inv_xyz - (dt * dt + dp * dp) * inv_ang).exp()
}

/// Vote mass at every vote location, aligned with `votes`.
///
/// Contributions are summed in source order so the result does not depend on
/// how the input is ordered.
pub fn vote_scores(votes: &[Vote], params: &VoteParams) -> Result<Vec<f64>, RelocError> {
    params.validate()?;
    let mut order: Vec<usize> = (0..votes.len()).collect();
    order.sort_by_key(|&i| votes[i].source());
    let prepared: Vec<(Pose, f64, f64)> = order
        .iter()
        .map(|&i| {
            let a = view_angles(&votes[i].pose);
            (votes[i].pose, a.theta, a.phi)
        })
        .collect();
    let weights: Vec<f64> = order
        .iter()
        .map(|&i| if params.weight_by_similarity { votes[i].similarity } else { 1.0 })
        .collect();
    let inv_xyz = 1.0 / (2.0 * params.sigma_xyz * params.sigma_xyz);
    let inv_ang = 1.0 / (2.0 * params.sigma_ang * params.sigma_ang);
    let sorted: Vec<f64> = prepared
        .par_iter()
        .map(|v| prepared.iter().zip(&weights).map(|(w, &wt)| wt * kernel(v, w, inv_xyz, inv_ang)).sum())
        .collect();
    let mut scores = vec![0.0; votes.len()];
    for (pos, &i) in order.iter().enumerate() {
        scores[i] = sorted[pos];
    }
    Ok(scores)
}

/// Votes paired with their scores, best first; ties go to the lowest source.
pub fn rank_votes(votes: &[Vote], params: &VoteParams) -> Result<Vec<(Vote, f64)>, RelocError> {
    let scores = vote_scores(votes, params)?;
    let mut ranked: Vec<(Vote, f64)> = votes.iter().copied().zip(scores).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.source().cmp(&b.0.source())));
    Ok(ranked)
}

pub fn gaussian_vote(votes: &[Vote], params: &VoteParams) -> Result<RelocEstimate, RelocError> {
    if votes.is_empty() {
        return Err(RelocError::NoVotes);
    }
    let (vote, score) = rank_votes(votes, params)?[0];
    Ok(RelocEstimate { pose: vote.pose, score, winning_vote: vote })
}

/// Top-`k_c` localization matches for every bundle query.
pub fn retrieve_candidates(epg: &Epg, bundle: &Bundle, k_c: usize) -> Result<Vec<Vec<Candidate>>, RelocError> {
    bundle
        .queries()
        .par_iter()
        .map(|q| {
            let hits = top_k(epg, q, Field::Localization, k_c)?;
            Ok(hits
                .into_iter()
                .map(|h| Candidate { pose: epg.node_at(h.index).pose, similarity: h.score, key: Some(h.key) })
                .collect())
        })
        .collect()
}

pub fn relocalize(epg: &Epg, bundle: &Bundle, k_c: usize, params: &VoteParams) -> Result<RelocEstimate, RelocError> {
    let candidates = retrieve_candidates(epg, bundle, k_c)?;
    gaussian_vote(&realign_votes(bundle, &candidates), params)
}

/// Refines candidates against the scene; unconverged refinements keep the
/// retrieved pose.
pub fn refine_candidates(
    candidates: &[Vec<Candidate>],
    clouds: &[Vec<Point>],
    scene: &SceneIndex,
    cfg: &IcpConfig,
) -> Result<Vec<Vec<Candidate>>, RelocError> {
    if scene.is_empty() {
        return Err(RelocError::MissingScene);
    }
    if clouds.len() != candidates.len() {
        return Err(RelocError::CloudCountMismatch { expected: candidates.len(), got: clouds.len() });
    }
    Ok(candidates
        .par_iter()
        .zip(clouds)
        .map(|(cands, cloud)| {
            cands
                .iter()
                .map(|c| {
                    let r = icp_refine(&c.pose, cloud, scene, cfg);
                    Candidate { pose: if r.converged { r.pose } else { c.pose }, ..*c }
                })
                .collect()
        })
        .collect())
}

pub fn relocalize_icp(
    epg: &Epg,
    bundle: &Bundle,
    clouds: &[Vec<Point>],
    scene: &SceneIndex,
    k_c: usize,
    params: &VoteParams,
    icp: &IcpConfig,
) -> Result<RelocEstimate, RelocError> {
    if scene.is_empty() {
        return Err(RelocError::MissingScene);
    }
    if clouds.len() != bundle.len() {
        return Err(RelocError::CloudCountMismatch { expected: bundle.len(), got: clouds.len() });
    }
    let candidates = retrieve_candidates(epg, bundle, k_c)?;
    let refined = refine_candidates(&candidates, clouds, scene, icp)?;
    gaussian_vote(&realign_votes(bundle, &refined), params)
}

/// Re-localization variants, from plain retrieval to refined bundle voting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RelocMode {
    Simple,
    Bundle,
    Icp,
    IcpBundle,
}

impl RelocMode {
    pub const ALL: [RelocMode; 4] = [RelocMode::Simple, RelocMode::Bundle, RelocMode::Icp, RelocMode::IcpBundle];

    pub fn name(&self) -> &'static str {
        match self {
            RelocMode::Simple => "simple",
            RelocMode::Bundle => "bundle",
            RelocMode::Icp => "icp",
            RelocMode::IcpBundle => "icp-bundle",
        }
    }

    pub fn uses_bundle(&self) -> bool {
        matches!(self, RelocMode::Bundle | RelocMode::IcpBundle)
    }

    pub fn uses_icp(&self) -> bool {
        matches!(self, RelocMode::Icp | RelocMode::IcpBundle)
    }
}

impl std::fmt::Display for RelocMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for RelocMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RelocMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown mode '{s}' (expected simple, bundle, icp or icp-bundle)"))
    }
}
