//! Retrieval over graph nodes: cosine top-K, view-overlap disambiguation and
//! waypoint paths through recorded poses.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap};

use thiserror::Error;

use crate::builder::Epg;
use crate::eval::{forward_angle, iou, visible_points, Intrinsics, Point};
use crate::grid::{cell_center, Pose, PoseKey};
use crate::vector::dot;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QueryError {
    #[error("graph is empty")]
    EmptyGraph,
    #[error("query has dimension {got}, {field:?} embeddings have {expected}")]
    DimensionMismatch { field: Field, expected: usize, got: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("key {0} is not in the graph")]
    UnknownKey(PoseKey),
    #[error("no path from {0} to {1}")]
    NoPath(PoseKey, PoseKey),
}

/// Which embedding a query is matched against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    Semantic,
    Localization,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryHit {
    pub key: PoseKey,
    pub score: f64,
    /// Commit-order index of the node.
    pub index: usize,
}

/// Nearest-neighbour search seam; the graph itself answers by exhaustive scan.
pub trait VectorSearch {
    fn search(&self, query: &[f32], field: Field, k: usize) -> Result<Vec<QueryHit>, QueryError>;
}

impl VectorSearch for Epg {
    fn search(&self, query: &[f32], field: Field, k: usize) -> Result<Vec<QueryHit>, QueryError> {
        top_k(self, query, field, k)
    }
}

fn hit_order(a: &QueryHit, b: &QueryHit) -> Ordering {
    b.score.total_cmp(&a.score).then(a.index.cmp(&b.index))
}

/// Top-`k` nodes by dot product (embeddings are unit vectors). Ties keep
/// commit order.
pub fn top_k(epg: &Epg, query: &[f32], field: Field, k: usize) -> Result<Vec<QueryHit>, QueryError> {
    if k == 0 {
        return Err(QueryError::ZeroK);
    }
    if epg.is_empty() {
        return Err(QueryError::EmptyGraph);
    }
    let expected = match field {
        Field::Semantic => epg.semantic_dim(),
        Field::Localization => epg.localization_dim(),
    };
    if query.len() != expected {
        return Err(QueryError::DimensionMismatch { field, expected, got: query.len() });
    }
    let mut hits: Vec<QueryHit> = epg
        .nodes()
        .map(|n| {
            let v = match field {
                Field::Semantic => &n.semantic,
                Field::Localization => &n.localization,
            };
            QueryHit { key: n.key, score: dot(query, v), index: n.insertion_index }
        })
        .collect();
    if k < hits.len() {
        hits.select_nth_unstable_by(k - 1, hit_order);
        hits.truncate(k);
    }
    hits.sort_by(hit_order);
    Ok(hits)
}

/// How the overlap between two candidate views is measured.
#[derive(Debug, Clone, Copy)]
pub enum OverlapModel<'a> {
    /// IoU of visible scene points.
    Scene { scene: &'a [Point], cam: Intrinsics },
    /// Scene-free estimate from view direction and distance.
    Heuristic { fov: f64, dl: f64 },
}

/// IoU of the scene points visible from two poses.
pub fn view_overlap(a: &Pose, b: &Pose, scene: &[Point], cam: &Intrinsics) -> f64 {
    iou(&visible_points(a, cam, scene), &visible_points(b, cam, scene))
}

/// `1 − clamp(angle/fov + distance/(2·dl), 0, 1)`.
pub fn heuristic_overlap(a: &Pose, b: &Pose, fov: f64, dl: f64) -> f64 {
    let angle = forward_angle(a, b);
    let dist = (a.translation - b.translation).norm();
    1.0 - (angle / fov + dist / (2.0 * dl)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisambiguationResult {
    /// Each cluster is sorted by score; its first hit represents it.
    pub clusters: Vec<Vec<QueryHit>>,
    pub needs_clarification: bool,
    /// True when overlap came from the scene-free heuristic.
    pub heuristic: bool,
}

impl DisambiguationResult {
    pub fn representatives(&self) -> Vec<QueryHit> {
        self.clusters.iter().map(|c| c[0]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisambiguationConfig {
    pub score_margin: f64,
    pub overlap_threshold: f64,
}

impl Default for DisambiguationConfig {
    fn default() -> Self {
        Self { score_margin: 0.02, overlap_threshold: 0.25 }
    }
}

/// Groups near-best hits by single-link clustering on view overlap.
pub fn disambiguate(hits: &[QueryHit], epg: &Epg, model: OverlapModel<'_>, cfg: DisambiguationConfig) -> DisambiguationResult {
    let heuristic = matches!(model, OverlapModel::Heuristic { .. });
    let Some(best) = hits.first() else {
        return DisambiguationResult { clusters: Vec::new(), needs_clarification: false, heuristic };
    };
    let cands: Vec<QueryHit> = hits.iter().copied().filter(|h| h.score >= best.score - cfg.score_margin).collect();
    let poses: Vec<Pose> = cands.iter().map(|h| epg.get(&h.key).map(|n| n.pose).unwrap_or_default()).collect();

    let overlap: Box<dyn Fn(usize, usize) -> f64> = match model {
        OverlapModel::Scene { scene, cam } => {
            let sets: Vec<Vec<usize>> = poses.iter().map(|p| visible_points(p, &cam, scene)).collect();
            Box::new(move |a, b| iou(&sets[a], &sets[b]))
        }
        OverlapModel::Heuristic { fov, dl } => {
            let params = *epg.params();
            let centers: Vec<Pose> = cands
                .iter()
                .zip(&poses)
                .map(|(h, p)| Pose { rotation: p.rotation, translation: cell_center(&h.key, &params).0 })
                .collect();
            Box::new(move |a, b| heuristic_overlap(&centers[a], &centers[b], fov, dl))
        }
    };

    let n = cands.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for a in 0..n {
        for b in a + 1..n {
            if overlap(a, b) > cfg.overlap_threshold {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }
    let mut groups: Vec<(usize, Vec<QueryHit>)> = Vec::new();
    for (i, h) in cands.iter().enumerate() {
        let root = find(&mut parent, i);
        match groups.iter_mut().find(|(r, _)| *r == root) {
            Some((_, g)) => g.push(*h),
            None => groups.push((root, vec![*h])),
        }
    }
    let clusters: Vec<Vec<QueryHit>> = groups.into_iter().map(|(_, g)| g).collect();
    DisambiguationResult { needs_clarification: clusters.len() > 1, clusters, heuristic }
}

/// Traversal graph over nodes (by commit index): consecutive nodes of a
/// session are linked, as are nodes whose cell centers are closer than
/// `2·dl`. Edge weights are center distances.
pub fn navigation_graph(epg: &Epg) -> Vec<Vec<(usize, f64)>> {
    let params = *epg.params();
    let n = epg.len();
    let centers: Vec<Point> = epg.nodes().map(|node| cell_center(&node.key, &params).0).collect();
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let add = |adj: &mut Vec<Vec<(usize, f64)>>, a: usize, b: usize| {
        if a != b && !adj[a].iter().any(|&(x, _)| x == b) {
            let w = (centers[a] - centers[b]).norm();
            adj[a].push((b, w));
            adj[b].push((a, w));
        }
    };
    for range in epg.session_ranges() {
        for i in range.start + 1..range.end {
            add(&mut adj, i - 1, i);
        }
    }
    let limit = 2.0 * params.dl * (1.0 - 1e-9);
    let mut buckets: HashMap<(i32, i32, i32), Vec<usize>> = HashMap::new();
    for (i, node) in epg.nodes().enumerate() {
        buckets.entry(node.key.spatial()).or_default().push(i);
    }
    for (i, node) in epg.nodes().enumerate() {
        let (ci, cj, ck) = node.key.spatial();
        for di in -2..=2 {
            for dj in -2..=2 {
                for dk in -2..=2 {
                    let Some(b) = buckets.get(&(ci + di, cj + dj, ck + dk)) else { continue };
                    for &o in b {
                        if o > i && (centers[i] - centers[o]).norm() < limit {
                            add(&mut adj, i, o);
                        }
                    }
                }
            }
        }
    }
    for a in adj.iter_mut() {
        a.sort_by_key(|&(x, _)| x);
    }
    adj
}

#[derive(PartialEq)]
struct Dist(f64);
impl Eq for Dist {}
impl PartialOrd for Dist {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Dist {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Shortest chain of recorded poses from `start` to `goal`.
pub fn waypoints(epg: &Epg, start: PoseKey, goal: PoseKey) -> Result<Vec<PoseKey>, QueryError> {
    let s = epg.get(&start).ok_or(QueryError::UnknownKey(start))?.insertion_index;
    let g = epg.get(&goal).ok_or(QueryError::UnknownKey(goal))?.insertion_index;
    if s == g {
        return Ok(vec![start]);
    }
    let adj = navigation_graph(epg);
    let mut dist = vec![f64::INFINITY; adj.len()];
    let mut prev = vec![usize::MAX; adj.len()];
    let mut heap = BinaryHeap::new();
    dist[s] = 0.0;
    heap.push(Reverse((Dist(0.0), s)));
    while let Some(Reverse((Dist(d), u))) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        if u == g {
            break;
        }
        for &(v, w) in &adj[u] {
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                prev[v] = u;
                heap.push(Reverse((Dist(nd), v)));
            }
        }
    }
    if !dist[g].is_finite() {
        return Err(QueryError::NoPath(start, goal));
    }
    let mut path = vec![g];
    while *path.last().unwrap() != s {
        path.push(prev[*path.last().unwrap()]);
    }
    path.reverse();
    Ok(path.into_iter().map(|i| epg.order()[i]).collect())
}

/// Length of a key path measured between cell centers.
pub fn path_length(epg: &Epg, path: &[PoseKey]) -> f64 {
    let p = epg.params();
    path.windows(2).map(|w| (cell_center(&w[0], p).0 - cell_center(&w[1], p).0).norm()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builder::{ingest_sessions, BuilderConfig, Embeddings, Frame, ProviderError};
    use crate::grid::GridParams;
    use nalgebra::Vector3;

    fn build(sessions: Vec<Vec<Frame>>, emb: impl Fn(&str) -> Embeddings) -> Epg {
        let cfg = BuilderConfig { semantic_dim: 3, localization_dim: 3, revisit_window: 0.0, ..Default::default() };
        let mut provider = |id: &str| -> Result<Embeddings, ProviderError> { Ok(emb(id)) };
        ingest_sessions(sessions, GridParams::indoor(), cfg, &mut provider).unwrap().0
    }

    fn straight(n: usize, y: f64, t0: f64, prefix: &str) -> Vec<Frame> {
        (0..n)
            .map(|i| Frame::new(t0 + i as f64, Pose::looking(Vector3::new(0.2 + 0.4 * i as f64, y, 0.2), 0.0, 0.0, 0.0), format!("{prefix}{i}")))
            .collect()
    }

    fn axis_embedding(id: &str) -> Embeddings {
        let i: usize = id[1..].parse().unwrap();
        let mut v = vec![0.0f32; 3];
        v[i % 3] = 1.0;
        Embeddings { semantic: v.clone(), localization: v }
    }

    #[test]
    fn self_match_first() {
        let epg = build(vec![straight(6, 0.2, 0.0, "a")], axis_embedding);
        let q = epg.node_at(4).semantic.clone();
        let hits = top_k(&epg, &q, Field::Semantic, 3).unwrap();
        assert_eq!(hits[0].score, 1.0);
        // nodes 1 and 4 share the embedding; commit order breaks the tie
        assert_eq!(hits[0].index, 1);
        assert_eq!(hits[1].index, 4);
    }

    #[test]
    fn orthogonal_query_keeps_insertion_order() {
        let epg = build(vec![straight(5, 0.2, 0.0, "a")], |_| Embeddings { semantic: vec![1.0, 0.0, 0.0], localization: vec![1.0, 0.0, 0.0] });
        let hits = top_k(&epg, &[0.0, 1.0, 0.0], Field::Localization, 5).unwrap();
        assert!(hits.iter().all(|h| h.score == 0.0));
        assert_eq!(hits.iter().map(|h| h.index).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn top_k_errors() {
        let epg = build(vec![straight(2, 0.2, 0.0, "a")], axis_embedding);
        assert!(matches!(top_k(&epg, &[1.0], Field::Semantic, 1), Err(QueryError::DimensionMismatch { .. })));
        assert_eq!(top_k(&epg, &[1.0, 0.0, 0.0], Field::Semantic, 0), Err(QueryError::ZeroK));
        let empty = Epg::new(GridParams::indoor(), 3, 3);
        assert_eq!(top_k(&empty, &[1.0, 0.0, 0.0], Field::Semantic, 1), Err(QueryError::EmptyGraph));
        assert_eq!(top_k(&epg, &[1.0, 0.0, 0.0], Field::Semantic, 10).unwrap().len(), 2);
    }

    #[test]
    fn straight_path_follows_commit_order() {
        let epg = build(vec![straight(5, 0.2, 0.0, "a")], axis_embedding);
        let path = waypoints(&epg, epg.order()[0], epg.order()[4]).unwrap();
        assert_eq!(path, epg.order().to_vec());
        assert_eq!(waypoints(&epg, epg.order()[2], epg.order()[2]).unwrap(), vec![epg.order()[2]]);
    }

    #[test]
    fn disconnected_sessions_have_no_path() {
        let epg = build(vec![straight(3, 0.2, 0.0, "a"), straight(3, 20.2, 100.0, "b")], axis_embedding);
        assert!(matches!(waypoints(&epg, epg.order()[0], epg.order()[5]), Err(QueryError::NoPath(..))));
        let missing = PoseKey::new(99, 0, 0, 0, 0);
        assert_eq!(waypoints(&epg, missing, epg.order()[0]), Err(QueryError::UnknownKey(missing)));
    }

    fn hit(epg: &Epg, i: usize, score: f64) -> QueryHit {
        QueryHit { key: epg.order()[i], score, index: i }
    }

    #[test]
    fn disambiguation_cases() {
        // two nodes side by side looking the same way, one in another room
        let frames = vec![
            Frame::new(0.0, Pose::looking(Vector3::new(0.2, 0.2, 0.2), 0.0, 0.0, 0.0), "a0"),
            Frame::new(1.0, Pose::looking(Vector3::new(0.2, 0.6, 0.2), 0.0, 0.0, 0.0), "a1"),
            Frame::new(2.0, Pose::looking(Vector3::new(0.2, 30.2, 0.2), 0.0, 0.0, 0.0), "a2"),
        ];
        let epg = build(vec![frames], axis_embedding);
        let mut scene = Vec::new();
        for a in 0..40 {
            for b in 0..40 {
                let (y, z) = (-2.0 + a as f64 * 0.1, -2.0 + b as f64 * 0.1);
                scene.push(Vector3::new(3.0, y, z));
                scene.push(Vector3::new(3.0, y + 30.0, z));
            }
        }
        let model = OverlapModel::Scene { scene: &scene, cam: Intrinsics::indoor() };
        let cfg = DisambiguationConfig::default();

        let one = disambiguate(&[hit(&epg, 0, 0.9)], &epg, model, cfg);
        assert_eq!(one.clusters.len(), 1);
        assert!(!one.needs_clarification);

        let p0 = epg.node_at(0).pose;
        let p1 = epg.node_at(1).pose;
        assert!(view_overlap(&p0, &p1, &scene, &Intrinsics::indoor()) > 0.25);
        let same = disambiguate(&[hit(&epg, 0, 0.9), hit(&epg, 1, 0.89)], &epg, model, cfg);
        assert_eq!(same.clusters.len(), 1);

        let apart = disambiguate(&[hit(&epg, 0, 0.9), hit(&epg, 2, 0.895), hit(&epg, 1, 0.5)], &epg, model, cfg);
        assert!(apart.needs_clarification);
        assert_eq!(apart.clusters.len(), 2);
        assert_eq!(apart.representatives()[0].index, 0);
        assert!(!apart.heuristic);

        let h = disambiguate(&[hit(&epg, 0, 0.9), hit(&epg, 2, 0.895)], &epg, OverlapModel::Heuristic { fov: 1.0, dl: 0.4 }, cfg);
        assert!(h.heuristic && h.needs_clarification);
    }

    #[test]
    fn overlap_extremes() {
        let scene: Vec<Point> = (0..100).map(|i| Vector3::new((i % 10) as f64 * 0.2 - 1.0, (i / 10) as f64 * 0.2 - 1.0, 2.0)).collect();
        let a = Pose::identity();
        assert_eq!(view_overlap(&a, &a, &scene, &Intrinsics::indoor()), 1.0);
        let back = Pose::looking(Vector3::zeros(), 0.0, -std::f64::consts::FRAC_PI_2, 0.0);
        assert_eq!(view_overlap(&a, &back, &scene, &Intrinsics::indoor()), 0.0);
    }
}
