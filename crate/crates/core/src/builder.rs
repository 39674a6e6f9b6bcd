//! Streaming construction of an embedding pose graph.
//!
//! Frames are consumed in timestamp order. While the camera stays inside one
//! cell the best-centered frame of the visit is tracked; embeddings are only
//! requested from the provider when the visit ends and its best frame is
//! actually stored. A cell committed less than `revisit_window` seconds
//! before a new visit starts is left untouched.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::grid::{cell_center, pose_key, view_angles, wrap_angle, GridError, GridParams, Pose, PoseKey};
use crate::vector;

pub const DEFAULT_SEMANTIC_DIM: usize = 768;
pub const DEFAULT_LOCALIZATION_DIM: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub timestamp: f64,
    pub pose: Pose,
    pub frame_id: String,
}

impl Frame {
    pub fn new(timestamp: f64, pose: Pose, frame_id: impl Into<String>) -> Self {
        Self { timestamp, pose, frame_id: frame_id.into() }
    }
}

/// Embedding pair for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub semantic: Vec<f32>,
    pub localization: Vec<f32>,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{0}")]
pub struct ProviderError(pub String);

/// Resolves a frame id to its embeddings.
pub trait EmbeddingProvider {
    fn embed(&mut self, frame_id: &str) -> Result<Embeddings, ProviderError>;
}

impl<F> EmbeddingProvider for F
where
    F: FnMut(&str) -> Result<Embeddings, ProviderError>,
{
    fn embed(&mut self, frame_id: &str) -> Result<Embeddings, ProviderError> {
        self(frame_id)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BuildError {
    #[error("frame {frame_id}: timestamp {timestamp} precedes {previous}")]
    OutOfOrder { frame_id: String, timestamp: f64, previous: f64 },
    #[error("embedding provider failed for frame {frame_id}: {source}")]
    Provider { frame_id: String, source: ProviderError },
    #[error("frame {frame_id}: {field} embedding has dimension {got}, expected {expected}")]
    Dimension { frame_id: String, field: &'static str, expected: usize, got: usize },
    #[error("frame {frame_id}: {source}")]
    Grid { frame_id: String, source: GridError },
    #[error("grid parameters or embedding dimensions differ between graphs")]
    Mismatch,
    #[error("invalid builder configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuilderConfig {
    /// Seconds during which a committed cell ignores revisits.
    pub revisit_window: f64,
    /// Weight of the angular terms of the centering score.
    pub angle_weight: f64,
    pub semantic_dim: usize,
    pub localization_dim: usize,
}

impl Default for BuilderConfig {
    fn default() -> Self {
        Self {
            revisit_window: 10.0,
            angle_weight: 1.0,
            semantic_dim: DEFAULT_SEMANTIC_DIM,
            localization_dim: DEFAULT_LOCALIZATION_DIM,
        }
    }
}

/// One stored pose.
#[derive(Debug, Clone, PartialEq)]
pub struct EpgNode {
    pub key: PoseKey,
    pub pose: Pose,
    pub timestamp: f64,
    pub frame_id: String,
    /// Unit vector whose entries are exactly representable in half precision.
    pub semantic: Vec<f32>,
    pub localization: Vec<f32>,
    /// Position of the node in commit order.
    pub insertion_index: usize,
    pub score: f64,
}

/// Map from 5D cells to their stored node, plus commit order.
#[derive(Debug, Clone, PartialEq)]
pub struct Epg {
    params: GridParams,
    semantic_dim: usize,
    localization_dim: usize,
    nodes: BTreeMap<PoseKey, EpgNode>,
    order: Vec<PoseKey>,
    session_boundaries: Vec<usize>,
}

impl Epg {
    pub fn new(params: GridParams, semantic_dim: usize, localization_dim: usize) -> Self {
        Self {
            params,
            semantic_dim,
            localization_dim,
            nodes: BTreeMap::new(),
            order: Vec::new(),
            session_boundaries: Vec::new(),
        }
    }

    /// Reassembles a graph from nodes listed in commit order. Used by loaders.
    pub fn from_parts(
        params: GridParams,
        semantic_dim: usize,
        localization_dim: usize,
        nodes: Vec<EpgNode>,
        session_boundaries: Vec<usize>,
    ) -> Result<Self, String> {
        let mut epg = Self::new(params, semantic_dim, localization_dim);
        for (idx, node) in nodes.into_iter().enumerate() {
            if node.insertion_index != idx {
                return Err(format!("node {} has insertion index {}", idx, node.insertion_index));
            }
            if node.semantic.len() != semantic_dim || node.localization.len() != localization_dim {
                return Err(format!("node {idx} has wrong embedding dimensions"));
            }
            epg.order.push(node.key);
            if epg.nodes.insert(node.key, node).is_some() {
                return Err(format!("duplicate key at node {idx}"));
            }
        }
        if session_boundaries.windows(2).any(|w| w[0] > w[1])
            || session_boundaries.iter().any(|&b| b > epg.order.len())
        {
            return Err("session boundaries are not sorted within the node range".into());
        }
        epg.session_boundaries = session_boundaries;
        Ok(epg)
    }

    pub fn params(&self) -> &GridParams {
        &self.params
    }

    pub fn semantic_dim(&self) -> usize {
        self.semantic_dim
    }

    pub fn localization_dim(&self) -> usize {
        self.localization_dim
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn get(&self, key: &PoseKey) -> Option<&EpgNode> {
        self.nodes.get(key)
    }

    pub fn contains(&self, key: &PoseKey) -> bool {
        self.nodes.contains_key(key)
    }

    /// Keys in commit order.
    pub fn order(&self) -> &[PoseKey] {
        &self.order
    }

    pub fn session_boundaries(&self) -> &[usize] {
        &self.session_boundaries
    }

    /// Nodes in commit order.
    pub fn nodes(&self) -> impl ExactSizeIterator<Item = &EpgNode> + '_ {
        self.order.iter().map(move |k| &self.nodes[k])
    }

    pub fn node_at(&self, index: usize) -> &EpgNode {
        &self.nodes[&self.order[index]]
    }

    /// Commit-order index ranges of each session.
    #[allow(clippy::single_range_in_vec_init)]
    pub fn session_ranges(&self) -> Vec<std::ops::Range<usize>> {
        if self.session_boundaries.is_empty() {
            return if self.order.is_empty() { Vec::new() } else { vec![0..self.order.len()] };
        }
        let mut out = Vec::with_capacity(self.session_boundaries.len());
        if self.session_boundaries[0] > 0 {
            out.push(0..self.session_boundaries[0]);
        }
        for (s, &start) in self.session_boundaries.iter().enumerate() {
            let end = self.session_boundaries.get(s + 1).copied().unwrap_or(self.order.len());
            out.push(start..end);
        }
        out
    }

    fn begin_session(&mut self) {
        self.session_boundaries.push(self.order.len());
    }

    fn remove_from_order(&mut self, key: &PoseKey) {
        let Some(pos) = self.order.iter().position(|k| k == key) else { return };
        self.order.remove(pos);
        for b in self.session_boundaries.iter_mut() {
            if *b > pos {
                *b -= 1;
            }
        }
        for idx in pos..self.order.len() {
            let k = self.order[idx];
            if let Some(n) = self.nodes.get_mut(&k) {
                n.insertion_index = idx;
            }
        }
    }

    /// Stores `node`, replacing any node of the same key and moving the key
    /// to the end of the commit order.
    fn commit(&mut self, mut node: EpgNode) {
        if self.nodes.contains_key(&node.key) {
            self.remove_from_order(&node.key);
        }
        node.insertion_index = self.order.len();
        self.order.push(node.key);
        self.nodes.insert(node.key, node);
    }
}

/// Distance of a pose to the ideal center of its cell, in cell-width units,
/// negated so that higher is better. Zero only for an exactly centered pose.
pub fn centering_score(pose: &Pose, key: &PoseKey, params: &GridParams, angle_weight: f64) -> f64 {
    let (center, center_angles) = cell_center(key, params);
    let angles = view_angles(pose);
    let spatial = (pose.translation - center).norm() / params.dl;
    let mut angular = (angles.phi - center_angles.phi).abs() / params.d_phi;
    if !params.is_cap_ring(key.l) {
        angular += wrap_angle(angles.theta - center_angles.theta).abs() / params.ring_width(key.l);
    }
    -(spatial + angle_weight * angular)
}

/// Counters describing one build.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BuildStats {
    pub frames: usize,
    pub visits: usize,
    pub commits: usize,
    pub suppressed: usize,
    pub not_improved: usize,
    pub provider_calls: usize,
}

struct Visit {
    key: PoseKey,
    best: Frame,
    best_score: f64,
    entry_time: f64,
    exit_time: f64,
}

/// Incremental builder; one instance per graph.
pub struct EpgBuilder<'a, P: EmbeddingProvider + ?Sized> {
    epg: Epg,
    config: BuilderConfig,
    provider: &'a mut P,
    pending: Option<Visit>,
    last_timestamp: Option<f64>,
    last_commit: HashMap<PoseKey, f64>,
    stats: BuildStats,
}

impl<'a, P: EmbeddingProvider + ?Sized> EpgBuilder<'a, P> {
    pub fn new(params: GridParams, config: BuilderConfig, provider: &'a mut P) -> Result<Self, BuildError> {
        params.validate().map_err(|e| BuildError::Config(e.to_string()))?;
        if !(config.revisit_window >= 0.0) || !config.angle_weight.is_finite() {
            return Err(BuildError::Config("revisit_window must be >= 0".into()));
        }
        let mut epg = Epg::new(params, config.semantic_dim, config.localization_dim);
        epg.begin_session();
        Ok(Self {
            epg,
            config,
            provider,
            pending: None,
            last_timestamp: None,
            last_commit: HashMap::new(),
            stats: BuildStats::default(),
        })
    }

    /// Continues building on top of an existing graph; a new session is opened.
    pub fn extend(epg: Epg, config: BuilderConfig, provider: &'a mut P) -> Result<Self, BuildError> {
        if epg.semantic_dim != config.semantic_dim || epg.localization_dim != config.localization_dim {
            return Err(BuildError::Mismatch);
        }
        let mut last_commit = HashMap::new();
        for n in epg.nodes() {
            last_commit.insert(n.key, n.timestamp);
        }
        let mut b = Self::new(epg.params, config, provider)?;
        b.epg = epg;
        b.epg.begin_session();
        b.last_commit = last_commit;
        Ok(b)
    }

    pub fn push(&mut self, frame: Frame) -> Result<(), BuildError> {
        if let Some(prev) = self.last_timestamp {
            if !(frame.timestamp >= prev) {
                return Err(BuildError::OutOfOrder {
                    frame_id: frame.frame_id,
                    timestamp: frame.timestamp,
                    previous: prev,
                });
            }
        }
        let params = self.epg.params;
        let key = pose_key(&frame.pose, &params)
            .map_err(|source| BuildError::Grid { frame_id: frame.frame_id.clone(), source })?;
        let score = centering_score(&frame.pose, &key, &params, self.config.angle_weight);
        self.last_timestamp = Some(frame.timestamp);
        self.stats.frames += 1;

        match self.pending.as_mut() {
            Some(v) if v.key == key => {
                v.exit_time = frame.timestamp;
                if score > v.best_score {
                    v.best_score = score;
                    v.best = frame;
                }
            }
            _ => {
                self.flush()?;
                self.stats.visits += 1;
                self.pending = Some(Visit {
                    key,
                    entry_time: frame.timestamp,
                    exit_time: frame.timestamp,
                    best: frame,
                    best_score: score,
                });
            }
        }
        Ok(())
    }

    /// Ends the current session and opens a new one. Timestamps may restart.
    pub fn next_session(&mut self) -> Result<(), BuildError> {
        self.flush()?;
        self.last_timestamp = None;
        self.epg.begin_session();
        Ok(())
    }

    pub fn stats(&self) -> BuildStats {
        self.stats
    }

    pub fn finish(mut self) -> Result<(Epg, BuildStats), BuildError> {
        self.flush()?;
        Ok((self.epg, self.stats))
    }

    fn flush(&mut self) -> Result<(), BuildError> {
        let Some(visit) = self.pending.take() else { return Ok(()) };
        if let Some(&last) = self.last_commit.get(&visit.key) {
            let gap = visit.entry_time - last;
            if gap >= 0.0 && gap < self.config.revisit_window {
                self.stats.suppressed += 1;
                return Ok(());
            }
        }
        if let Some(existing) = self.epg.get(&visit.key) {
            if !(visit.best_score > existing.score) {
                self.stats.not_improved += 1;
                return Ok(());
            }
        }
        let frame = visit.best;
        self.stats.provider_calls += 1;
        let emb = self.provider.embed(&frame.frame_id).map_err(|source| BuildError::Provider {
            frame_id: frame.frame_id.clone(),
            source,
        })?;
        let Embeddings { mut semantic, mut localization } = emb;
        check_dim(&frame.frame_id, "semantic", self.config.semantic_dim, semantic.len())?;
        check_dim(&frame.frame_id, "localization", self.config.localization_dim, localization.len())?;
        vector::normalize(&mut semantic);
        vector::quantize_f16(&mut semantic);
        vector::normalize(&mut localization);

        self.epg.commit(EpgNode {
            key: visit.key,
            pose: frame.pose,
            timestamp: frame.timestamp,
            frame_id: frame.frame_id,
            semantic,
            localization,
            insertion_index: 0,
            score: visit.best_score,
        });
        self.last_commit.insert(visit.key, visit.exit_time);
        self.stats.commits += 1;
        Ok(())
    }
}

fn check_dim(frame_id: &str, field: &'static str, expected: usize, got: usize) -> Result<(), BuildError> {
    if expected == got {
        Ok(())
    } else {
        Err(BuildError::Dimension { frame_id: frame_id.to_string(), field, expected, got })
    }
}

/// Builds a graph from a single session of frames.
pub fn ingest<I, P>(
    frames: I,
    params: GridParams,
    config: BuilderConfig,
    provider: &mut P,
) -> Result<(Epg, BuildStats), BuildError>
where
    I: IntoIterator<Item = Frame>,
    P: EmbeddingProvider + ?Sized,
{
    ingest_sessions([frames], params, config, provider)
}

/// Builds a graph from several capture sessions, in order.
pub fn ingest_sessions<S, I, P>(
    sessions: S,
    params: GridParams,
    config: BuilderConfig,
    provider: &mut P,
) -> Result<(Epg, BuildStats), BuildError>
where
    S: IntoIterator<Item = I>,
    I: IntoIterator<Item = Frame>,
    P: EmbeddingProvider + ?Sized,
{
    let mut builder = EpgBuilder::new(params, config, provider)?;
    for (s, frames) in sessions.into_iter().enumerate() {
        if s > 0 {
            builder.next_session()?;
        }
        for f in frames {
            builder.push(f)?;
        }
    }
    builder.finish()
}

/// Union of two graphs built on the same grid. On a shared key the node with
/// the strictly higher centering score replaces the base node.
pub fn merge(base: &Epg, addition: &Epg) -> Result<Epg, BuildError> {
    if base.params != addition.params
        || base.semantic_dim != addition.semantic_dim
        || base.localization_dim != addition.localization_dim
    {
        return Err(BuildError::Mismatch);
    }
    let winners: Vec<&EpgNode> = addition
        .nodes()
        .filter(|n| base.get(&n.key).is_none_or(|b| n.score > b.score))
        .collect();
    let replaced: std::collections::HashSet<PoseKey> =
        winners.iter().filter(|n| base.contains(&n.key)).map(|n| n.key).collect();

    let mut nodes = Vec::with_capacity(base.len() + winners.len());
    let mut kept_before = Vec::with_capacity(base.len() + 1);
    for n in base.nodes() {
        kept_before.push(nodes.len());
        if !replaced.contains(&n.key) {
            nodes.push(n.clone());
        }
    }
    kept_before.push(nodes.len());
    let mut boundaries: Vec<usize> = base.session_boundaries.iter().map(|&b| kept_before[b]).collect();

    let offset = nodes.len();
    let mut add_before = Vec::with_capacity(addition.len() + 1);
    let mut kept = 0;
    let winner_keys: std::collections::HashSet<PoseKey> = winners.iter().map(|n| n.key).collect();
    for n in addition.nodes() {
        add_before.push(kept);
        if winner_keys.contains(&n.key) {
            nodes.push(n.clone());
            kept += 1;
        }
    }
    add_before.push(kept);
    boundaries.extend(addition.session_boundaries.iter().map(|&b| offset + add_before[b]));

    for (i, n) in nodes.iter_mut().enumerate() {
        n.insertion_index = i;
    }
    Epg::from_parts(base.params, base.semantic_dim, base.localization_dim, nodes, boundaries)
        .map_err(BuildError::Config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn params() -> GridParams {
        GridParams::indoor()
    }

    fn small_config() -> BuilderConfig {
        BuilderConfig { semantic_dim: 4, localization_dim: 3, ..Default::default() }
    }

    fn provider(calls: &mut Vec<String>) -> impl FnMut(&str) -> Result<Embeddings, ProviderError> + '_ {
        move |id: &str| {
            calls.push(id.to_string());
            let h = id.bytes().map(|b| b as f32).sum::<f32>();
            Ok(Embeddings { semantic: vec![h, 1.0, 2.0, 3.0], localization: vec![1.0, h, 0.5] })
        }
    }

    /// Pose inside cell (0,0,0,0,0) with a chosen x offset from the center.
    fn pose_with_offset(dx: f64) -> Pose {
        let p = params();
        let key = PoseKey::new(0, 0, 0, 0, 0);
        let (c, a) = cell_center(&key, &p);
        Pose::looking(c + Vector3::new(dx, 0.0, 0.0), a.theta, a.phi, 0.0)
    }

    #[test]
    fn score_examples() {
        let p = params();
        let key = PoseKey::new(0, 0, 0, 0, 0);
        assert!(centering_score(&pose_with_offset(0.0), &key, &p, 1.0).abs() < 1e-12);
        assert!((centering_score(&pose_with_offset(0.2 - 1e-12), &key, &p, 1.0) + 0.5).abs() < 1e-9);
        let near = centering_score(&pose_with_offset(0.05), &key, &p, 1.0);
        let far = centering_score(&pose_with_offset(0.15), &key, &p, 1.0);
        assert!(near > far);
    }

    #[test]
    fn best_of_visit_commit() {
        let offsets = [0.16, 0.04, 0.12];
        let frames: Vec<Frame> = offsets
            .iter()
            .enumerate()
            .map(|(i, &dx)| Frame::new(i as f64, pose_with_offset(dx), format!("f{}", i + 1)))
            .collect();
        let mut calls = Vec::new();
        let (epg, stats) = ingest(frames, params(), small_config(), &mut provider(&mut calls)).unwrap();
        assert_eq!(epg.len(), 1);
        assert_eq!(epg.node_at(0).frame_id, "f2");
        assert_eq!(calls, vec!["f2".to_string()]);
        assert_eq!(stats.provider_calls, 1);
        let n = epg.node_at(0);
        assert!((vector::norm(&n.semantic) - 1.0).abs() < 1e-3);
        assert!(vector::is_f16_exact(&n.semantic));
    }

    fn outside() -> Pose {
        Pose::looking(Vector3::new(5.0, 5.0, 0.2), 0.2, 0.1, 0.0)
    }

    #[test]
    fn revisit_inside_window_is_discarded() {
        let frames = vec![
            Frame::new(0.0, pose_with_offset(0.1), "a"),
            Frame::new(1.0, outside(), "b"),
            Frame::new(5.0, pose_with_offset(0.0), "c"),
        ];
        let mut calls = Vec::new();
        let (epg, stats) = ingest(frames, params(), small_config(), &mut provider(&mut calls)).unwrap();
        assert_eq!(epg.get(&PoseKey::new(0, 0, 0, 0, 0)).unwrap().frame_id, "a");
        assert_eq!(stats.suppressed, 1);
        assert_eq!(calls, vec!["a", "b"]);
    }

    #[test]
    fn revisit_after_window_replaces_only_when_better() {
        let frames = vec![
            Frame::new(0.0, pose_with_offset(0.1), "a"),
            Frame::new(1.0, outside(), "b"),
            Frame::new(20.0, pose_with_offset(0.15), "worse"),
            Frame::new(21.0, outside(), "b2"),
            Frame::new(40.0, pose_with_offset(0.0), "better"),
        ];
        let mut calls = Vec::new();
        let (epg, stats) = ingest(frames, params(), small_config(), &mut provider(&mut calls)).unwrap();
        let key = PoseKey::new(0, 0, 0, 0, 0);
        assert_eq!(epg.get(&key).unwrap().frame_id, "better");
        assert_eq!(stats.not_improved, 2);
        // replaced key moved to the end of commit order
        assert_eq!(epg.order().last(), Some(&key));
        assert_eq!(epg.get(&key).unwrap().insertion_index, 1);
        assert_eq!(epg.len(), 2);
    }

    #[test]
    fn out_of_order_rejected() {
        let frames = vec![Frame::new(2.0, outside(), "a"), Frame::new(1.0, outside(), "b")];
        let mut calls = Vec::new();
        let err = ingest(frames, params(), small_config(), &mut provider(&mut calls)).unwrap_err();
        assert!(matches!(err, BuildError::OutOfOrder { ref frame_id, .. } if frame_id == "b"));
    }

    #[test]
    fn provider_failure_names_frame() {
        let frames = vec![Frame::new(0.0, outside(), "bad")];
        let mut failing = |_: &str| -> Result<Embeddings, ProviderError> { Err(ProviderError("boom".into())) };
        let err = ingest(frames, params(), small_config(), &mut failing).unwrap_err();
        assert!(err.to_string().contains("bad"));
    }

    #[test]
    fn wrong_dimension_rejected() {
        let frames = vec![Frame::new(0.0, outside(), "x")];
        let mut calls = Vec::new();
        let cfg = BuilderConfig { semantic_dim: 5, ..small_config() };
        let err = ingest(frames, params(), cfg, &mut provider(&mut calls)).unwrap_err();
        assert!(matches!(err, BuildError::Dimension { field: "semantic", .. }));
    }

    #[test]
    fn empty_stream_gives_empty_graph() {
        let mut calls = Vec::new();
        let (epg, _) = ingest(Vec::new(), params(), small_config(), &mut provider(&mut calls)).unwrap();
        assert!(epg.is_empty());
    }

    fn single_node_epg(x: f64, dx: f64, id: &str) -> Epg {
        let mut calls = Vec::new();
        let mut pose = pose_with_offset(dx);
        pose.translation.y += x;
        let mut prov = provider(&mut calls);
        let (epg, _) = ingest(vec![Frame::new(0.0, pose, id)], params(), small_config(), &mut prov).unwrap();
        epg
    }

    #[test]
    fn merge_rules() {
        let a = single_node_epg(0.0, 0.04, "a");
        let empty = Epg::new(params(), 4, 3);
        assert_eq!(merge(&a, &empty).unwrap(), a);

        let far = single_node_epg(4.0, 0.0, "far");
        let m = merge(&a, &far).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.session_boundaries(), &[0, 1]);

        let worse = single_node_epg(0.0, 0.12, "worse");
        assert_eq!(merge(&a, &worse).unwrap().node_at(0).frame_id, "a");
        assert_eq!(merge(&worse, &a).unwrap().node_at(0).frame_id, "a");

        let other = Epg::new(GridParams::outdoor(), 4, 3);
        assert_eq!(merge(&a, &other), Err(BuildError::Mismatch));
    }
}
