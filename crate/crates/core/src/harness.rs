//! Re-localization of whole query sequences in each mode, producing ranked
//! pose lists for recall evaluation.
//!
//! Retrieval and ICP refinement are done once per query frame and shared by
//! every bundle containing that frame.

use rayon::prelude::*;

use crate::builder::Epg;
use crate::eval::{Point, RecallReport, RecallRow, RecallThresholds, EvalError};
use crate::grid::Pose;
use crate::reloc::{
    rank_votes, realign_votes, retrieve_candidates, Bundle, Candidate, IcpConfig, RelocError, RelocMode, SceneIndex,
    VoteParams, DEFAULT_BUNDLE_SIZE, DEFAULT_CANDIDATES,
};

/// Consecutive query frames with odometry in a shared local frame.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySequence {
    pub frame_ids: Vec<String>,
    pub odometry: Vec<Pose>,
    pub embeddings: Vec<Vec<f32>>,
    /// Camera-frame depth points per frame, needed by the ICP modes.
    pub clouds: Option<Vec<Vec<Point>>>,
}

impl QuerySequence {
    pub fn len(&self) -> usize {
        self.odometry.len()
    }

    pub fn is_empty(&self) -> bool {
        self.odometry.is_empty()
    }

    fn check(&self) -> Result<(), RelocError> {
        if self.embeddings.len() != self.odometry.len() || self.frame_ids.len() != self.odometry.len() {
            return Err(RelocError::BundleMismatch { poses: self.odometry.len(), queries: self.embeddings.len() });
        }
        if let Some(c) = &self.clouds {
            if c.len() != self.odometry.len() {
                return Err(RelocError::CloudCountMismatch { expected: self.odometry.len(), got: c.len() });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarnessConfig {
    pub bundle_size: usize,
    pub candidates: usize,
    pub vote: VoteParams,
    pub icp: IcpConfig,
    /// Length of the ranked estimate list per query.
    pub top: usize,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            bundle_size: DEFAULT_BUNDLE_SIZE,
            candidates: DEFAULT_CANDIDATES,
            vote: VoteParams::indoor(),
            icp: IcpConfig::default(),
            top: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    /// Best first.
    pub estimates: Vec<Pose>,
    /// Vote mass of the winner in bundle modes, similarity of the best match
    /// otherwise.
    pub score: f64,
}

/// Frame range of the `size`-frame window around `i`, shifted to fit in
/// `0..n`.
pub fn bundle_window(n: usize, i: usize, size: usize) -> std::ops::Range<usize> {
    let size = size.clamp(1, n.max(1));
    let start = i.saturating_sub(size / 2).min(n - size);
    start..start + size
}

/// Per-frame candidates for a whole sequence.
pub struct CandidateTable {
    pub retrieved: Vec<Vec<Candidate>>,
    pub refined: Option<Vec<Vec<Candidate>>>,
}

impl CandidateTable {
    pub fn build(
        epg: &Epg,
        seq: &QuerySequence,
        cfg: &HarnessConfig,
        scene: Option<&SceneIndex>,
    ) -> Result<Self, RelocError> {
        seq.check()?;
        let k = cfg.candidates.max(cfg.top);
        let all = Bundle::new(seq.odometry.clone(), seq.embeddings.clone())?;
        let retrieved = retrieve_candidates(epg, &all, k)?;
        let refined = match scene {
            None => None,
            Some(scene) => {
                let clouds = seq.clouds.as_ref().ok_or(RelocError::CloudCountMismatch { expected: seq.len(), got: 0 })?;
                if scene.is_empty() {
                    return Err(RelocError::MissingScene);
                }
                Some(crate::reloc::refine_candidates(&retrieved, clouds, scene, &cfg.icp)?)
            }
        };
        Ok(Self { retrieved, refined })
    }

    fn for_mode(&self, mode: RelocMode) -> Result<&[Vec<Candidate>], RelocError> {
        if mode.uses_icp() {
            self.refined.as_deref().ok_or(RelocError::MissingScene)
        } else {
            Ok(&self.retrieved)
        }
    }
}

/// Localizes the queries at `indices` in `mode`.
pub fn localize(
    table: &CandidateTable,
    seq: &QuerySequence,
    mode: RelocMode,
    indices: &[usize],
    cfg: &HarnessConfig,
) -> Result<Vec<QueryOutcome>, RelocError> {
    let cands = table.for_mode(mode)?;
    indices
        .par_iter()
        .map(|&i| {
            if !mode.uses_bundle() {
                let c = &cands[i];
                return Ok(QueryOutcome {
                    estimates: c.iter().take(cfg.top).map(|c| c.pose).collect(),
                    score: c.first().map_or(f64::NEG_INFINITY, |c| c.similarity),
                });
            }
            let window = bundle_window(seq.len(), i, cfg.bundle_size);
            let bundle = Bundle::new(seq.odometry[window.clone()].to_vec(), seq.embeddings[window.clone()].to_vec())?;
            let mid = window.start + bundle.mid_index();
            let local: Vec<Vec<Candidate>> =
                cands[window].iter().map(|c| c.iter().take(cfg.candidates).copied().collect()).collect();
            let ranked = rank_votes(&realign_votes(&bundle, &local), &cfg.vote)?;
            if ranked.is_empty() {
                return Err(RelocError::NoVotes);
            }
            // Votes estimate the middle pose; carry them over to frame i.
            let mid_to_i = seq.odometry[mid].inverse().compose(&seq.odometry[i]);
            Ok(QueryOutcome {
                estimates: ranked.iter().take(cfg.top).map(|(v, _)| v.pose.compose(&mid_to_i)).collect(),
                score: ranked[0].1,
            })
        })
        .collect()
}

/// Recall table for every requested mode over the queries at `indices`.
#[allow(clippy::too_many_arguments)]
pub fn recall_report(
    table: &CandidateTable,
    seq: &QuerySequence,
    truths: &[Pose],
    modes: &[RelocMode],
    indices: &[usize],
    cfg: &HarnessConfig,
    coarse: &RecallThresholds,
    fine: &RecallThresholds,
) -> Result<RecallReport, HarnessError> {
    let selected: Vec<Pose> = indices.iter().map(|&i| truths[i]).collect();
    let mut rows = Vec::new();
    for &mode in modes {
        let out = localize(table, seq, mode, indices, cfg)?;
        let est: Vec<Vec<Pose>> = out.into_iter().map(|o| o.estimates).collect();
        rows.push(RecallRow::compute(mode.name(), &est, &selected, coarse, fine)?);
    }
    Ok(RecallReport { rows, queries: indices.len(), redundancy: None })
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Reloc(#[from] RelocError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn windows() {
        assert_eq!(bundle_window(100, 50, 15), 43..58);
        assert_eq!(bundle_window(100, 0, 15), 0..15);
        assert_eq!(bundle_window(100, 99, 15), 85..100);
        assert_eq!(bundle_window(5, 2, 15), 0..5);
        assert_eq!(bundle_window(10, 4, 1), 4..5);
        for n in 1..30 {
            for i in 0..n {
                let w = bundle_window(n, i, 7);
                assert!(w.contains(&i) && w.end <= n);
            }
        }
    }
}
