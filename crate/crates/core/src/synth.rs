//! Synthetic benchmark data: a furnished room, map and query trajectories
//! through it, a smooth descriptor field standing in for learned image
//! descriptors, and aliased distractor places far from the room.
//!
//! Every random stage draws from its own seeded stream, so changing one knob
//! (noise level, distractor count) leaves the other stages unchanged.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::builder::{ingest_sessions, BuildError, BuildStats, BuilderConfig, Epg, Frame};
use crate::eval::{visible_points, Intrinsics, Point};
use crate::grid::{GridParams, Pose};
use crate::harness::{bundle_window, QuerySequence};
use crate::io::{self, BundleFile, ElementType, EmbeddingFile, EmbeddingTable, IoError, PlyEncoding};
use crate::reloc::{Bundle, DEFAULT_BUNDLE_SIZE};

/// Room extent in meters; the floor spans `[0, ROOM.x] × [0, ROOM.y]`.
pub const ROOM: Vector3<f64> = Vector3::new(10.0, 8.0, 3.0);
const CAMERA_HEIGHT: f64 = 1.4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryKind {
    Loop,
    Corridor,
    FigureEight,
}

impl TrajectoryKind {
    pub const ALL: [TrajectoryKind; 3] = [TrajectoryKind::Loop, TrajectoryKind::Corridor, TrajectoryKind::FigureEight];

    fn name(self) -> &'static str {
        match self {
            TrajectoryKind::Loop => "loop",
            TrajectoryKind::Corridor => "corridor",
            TrajectoryKind::FigureEight => "figure-eight",
        }
    }

    /// Position on the path at parameter `u` (period 2π).
    fn position(self, u: f64) -> Vector3<f64> {
        let (cx, cy) = (ROOM.x / 2.0, ROOM.y / 2.0);
        let (x, y) = match self {
            TrajectoryKind::Loop => (cx + 3.0 * u.cos(), cy + 2.2 * u.sin()),
            TrajectoryKind::Corridor => (cx - 3.8 * u.cos(), cy + 0.6 * (2.0 * u).sin()),
            TrajectoryKind::FigureEight => (cx + 3.6 * u.sin(), cy + 2.6 * u.sin() * u.cos()),
        };
        Vector3::new(x, y, CAMERA_HEIGHT)
    }

    /// Camera pose at parameter `u`: facing along the motion, swinging left
    /// and right, with mild pitch and roll.
    fn pose(self, u: f64, swing: f64) -> Pose {
        let h = 1e-4;
        let d = self.position(u + h) - self.position(u - h);
        let heading = d.y.atan2(d.x);
        let yaw = heading + swing * (3.0 * u).sin();
        let pitch = 0.15 * (2.0 * u + 0.3).sin();
        let roll = 0.05 * (5.0 * u).sin();
        Pose::looking(self.position(u), yaw, pitch, roll)
    }
}

impl fmt::Display for TrajectoryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrajectoryKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown trajectory '{s}' (expected loop, corridor or figure-eight)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub trajectory: TrajectoryKind,
    /// Map frames, covering two laps of the path.
    pub frames: usize,
    /// Query frames, covering one lap of a perturbed path.
    pub query_frames: usize,
    pub scene_points: usize,
    /// Descriptor noise: each descriptor gets an isotropic Gaussian offset of
    /// expected norm `sigma_d` before re-normalization.
    pub sigma_d: f64,
    /// Far-away places whose descriptors copy those of map frames.
    pub distractors: usize,
    pub semantic_dim: usize,
    pub localization_dim: usize,
    /// Object classes; class 0 is placed twice.
    pub object_classes: usize,
    pub frame_dt: f64,
    /// Cap on depth points kept per query frame.
    pub cloud_points: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            trajectory: TrajectoryKind::Loop,
            frames: 600,
            query_frames: 150,
            scene_points: 20_000,
            sigma_d: 0.0,
            distractors: 0,
            semantic_dim: 32,
            localization_dim: 64,
            object_classes: 6,
            frame_dt: 0.1,
            cloud_points: 400,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), String> {
        let counts = [
            ("frames", self.frames),
            ("query_frames", self.query_frames),
            ("scene_points", self.scene_points),
            ("object_classes", self.object_classes),
            ("cloud_points", self.cloud_points),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(format!("{name} must be at least 1"));
            }
        }
        if self.semantic_dim < 2 || self.localization_dim < 2 {
            return Err("embedding dimensions must be at least 2".into());
        }
        if !(self.sigma_d.is_finite() && self.sigma_d >= 0.0) {
            return Err(format!("sigma_d must be finite and >= 0, got {}", self.sigma_d));
        }
        if !(self.frame_dt.is_finite() && self.frame_dt > 0.0) {
            return Err("frame_dt must be positive".into());
        }
        Ok(())
    }
}

/// Smooth map from poses to unit descriptors: sinusoids of the position and
/// of the view direction under random frequencies and phases.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorField {
    pos_freq: Vec<Vector3<f64>>,
    pos_phase: Vec<f64>,
    dir_freq: Vec<Vector3<f64>>,
    dir_phase: Vec<f64>,
}

impl DescriptorField {
    pub fn new(dim: usize, rng: &mut impl Rng) -> Self {
        let unit = |rng: &mut dyn rand::RngCore| -> Vector3<f64> {
            loop {
                let v = Vector3::new(
                    StandardNormal.sample(rng),
                    StandardNormal.sample(rng),
                    StandardNormal.sample(rng),
                );
                let n: f64 = v.norm();
                if n > 1e-9 {
                    return v / n;
                }
            }
        };
        let np = dim / 2;
        let nd = dim - np;
        let mut pos_freq = Vec::with_capacity(np);
        let mut pos_phase = Vec::with_capacity(np);
        for _ in 0..np {
            let f = rng.random_range(0.6..2.4);
            pos_freq.push(unit(rng) * f);
            pos_phase.push(rng.random_range(0.0..TAU));
        }
        let mut dir_freq = Vec::with_capacity(nd);
        let mut dir_phase = Vec::with_capacity(nd);
        for _ in 0..nd {
            let f = rng.random_range(1.0..3.0);
            dir_freq.push(unit(rng) * f);
            dir_phase.push(rng.random_range(0.0..TAU));
        }
        Self { pos_freq, pos_phase, dir_freq, dir_phase }
    }

    pub fn dim(&self) -> usize {
        self.pos_freq.len() + self.dir_freq.len()
    }

    /// Noiseless unit descriptor of `pose`.
    pub fn eval(&self, pose: &Pose) -> Vec<f64> {
        let p = pose.translation;
        let f = pose.forward();
        let mut v: Vec<f64> = self
            .pos_freq
            .iter()
            .zip(&self.pos_phase)
            .map(|(w, a)| (w.dot(&p) + a).sin())
            .chain(self.dir_freq.iter().zip(&self.dir_phase).map(|(w, a)| (w.dot(&f) + a).sin()))
            .collect();
        crate::vector::normalize_f64(&mut v);
        v
    }
}

/// `normalize(base + sigma · z / sqrt(dim))` for a standard normal `z`.
fn noisy(base: &[f64], sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let scale = sigma / (base.len() as f64).sqrt();
    let mut v: Vec<f64> = base
        .iter()
        .map(|b| {
            let z: f64 = StandardNormal.sample(rng);
            b + scale * z
        })
        .collect();
    crate::vector::normalize_f64(&mut v);
    v.into_iter().map(|x| x as f32).collect()
}

/// Axis-aligned box on the floor carrying one object class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneObject {
    pub class: usize,
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub config: SynthConfig,
    pub seed: u64,
    pub scene: Vec<Point>,
    pub objects: Vec<SceneObject>,
    /// Scene point ranges belonging to each object.
    pub object_points: Vec<std::ops::Range<usize>>,
    /// Text-like embedding per object class, rows `class_<c>`.
    pub classes: EmbeddingFile,
    pub map: Vec<Frame>,
    pub distractors: Vec<Frame>,
    /// Map frame each distractor copies its descriptor from.
    pub distractor_sources: Vec<usize>,
    /// Query odometry in a local frame unrelated to the world.
    pub queries: Vec<Frame>,
    pub query_truth: Vec<Pose>,
    pub query_clouds: Vec<Vec<Point>>,
    /// Rows for map, distractor and query frames.
    pub semantic: EmbeddingFile,
    pub localization: EmbeddingFile,
    pub field: DescriptorField,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn round_f32(p: Vector3<f64>) -> Vector3<f64> {
    p.map(|c| c as f32 as f64)
}

fn sample_box_surface(min: Vector3<f64>, max: Vector3<f64>, n: usize, rng: &mut ChaCha8Rng) -> Vec<Point> {
    let e = max - min;
    let areas = [e.y * e.z, e.y * e.z, e.x * e.z, e.x * e.z, e.x * e.y, e.x * e.y];
    let total: f64 = areas.iter().sum();
    (0..n)
        .map(|_| {
            let mut pick = rng.random_range(0.0..total);
            let mut face = 0;
            while face < 5 && pick >= areas[face] {
                pick -= areas[face];
                face += 1;
            }
            let (a, b) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
            let p = match face {
                0 => Vector3::new(0.0, a * e.y, b * e.z),
                1 => Vector3::new(e.x, a * e.y, b * e.z),
                2 => Vector3::new(a * e.x, 0.0, b * e.z),
                3 => Vector3::new(a * e.x, e.y, b * e.z),
                4 => Vector3::new(a * e.x, b * e.y, 0.0),
                _ => Vector3::new(a * e.x, b * e.y, e.z),
            };
            round_f32(min + p)
        })
        .collect()
}

/// Places objects in the band between the walls and the paths.
fn place_objects(classes: usize, rng: &mut ChaCha8Rng) -> Vec<SceneObject> {
    let mut objects = Vec::new();
    let instances = (0..classes).flat_map(|c| if c == 0 { vec![0, 0] } else { vec![c] });
    let slots = instances.clone().count();
    for (slot, class) in instances.enumerate() {
        // Spread objects around the perimeter, alternating sides.
        let t = (slot as f64 + rng.random_range(0.2..0.8)) / slots as f64;
        let perimeter = 2.0 * (ROOM.x + ROOM.y);
        let s = t * perimeter;
        let size = Vector3::new(rng.random_range(0.4..1.0), rng.random_range(0.4..1.0), rng.random_range(0.5..1.8));
        let inset = 0.15;
        let corner = if s < ROOM.x {
            Vector3::new(s.min(ROOM.x - size.x - inset), inset, 0.0)
        } else if s < ROOM.x + ROOM.y {
            Vector3::new(ROOM.x - size.x - inset, (s - ROOM.x).min(ROOM.y - size.y - inset), 0.0)
        } else if s < 2.0 * ROOM.x + ROOM.y {
            Vector3::new((2.0 * ROOM.x + ROOM.y - s).clamp(inset, ROOM.x - size.x - inset), ROOM.y - size.y - inset, 0.0)
        } else {
            Vector3::new(inset, (perimeter - s).clamp(inset, ROOM.y - size.y - inset), 0.0)
        };
        let min = Vector3::new(corner.x.max(inset), corner.y.max(inset), 0.0);
        objects.push(SceneObject { class, min, max: min + size });
    }
    objects
}

fn random_unit(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    crate::vector::normalize_f64(&mut v);
    v
}

/// Generates a benchmark instance. Deterministic in `(config, seed)`.
pub fn generate(config: &SynthConfig, seed: u64) -> Result<SynthData, String> {
    config.validate()?;
    let cam = Intrinsics::indoor();

    // Scene: room shell plus objects.
    let mut rng = stream(seed, 1);
    let objects = place_objects(config.object_classes, &mut rng);
    let object_share = config.scene_points * 3 / 10;
    let per_object = (object_share / objects.len()).max(1);
    let shell_points = config.scene_points.saturating_sub(per_object * objects.len()).max(1);
    let mut scene = Vec::with_capacity(config.scene_points);
    let mut object_points = Vec::with_capacity(objects.len());
    for o in &objects {
        let start = scene.len();
        scene.extend(sample_box_surface(o.min, o.max, per_object, &mut rng));
        object_points.push(start..scene.len());
    }
    scene.extend(sample_box_surface(Vector3::zeros(), ROOM, shell_points, &mut rng));

    // Descriptor fields.
    let mut rng = stream(seed, 2);
    let field = DescriptorField::new(config.localization_dim, &mut rng);
    let class_emb: Vec<Vec<f64>> = (0..config.object_classes).map(|_| random_unit(config.semantic_dim, &mut rng)).collect();
    let background = random_unit(config.semantic_dim, &mut rng);

    // Map and query trajectories.
    let kind = config.trajectory;
    let map: Vec<Frame> = (0..config.frames)
        .map(|i| {
            let u = 2.0 * TAU * i as f64 / config.frames as f64;
            Frame::new(i as f64 * config.frame_dt, kind.pose(u, 0.9), format!("map_{i:05}"))
        })
        .collect();
    let mut rng = stream(seed, 3);
    let phase = rng.random_range(0.0..TAU);
    let query_truth: Vec<Pose> = (0..config.query_frames)
        .map(|i| {
            let u = phase + TAU * i as f64 / config.query_frames as f64;
            let base = kind.pose(u, 0.8);
            let wobble = Vector3::new(0.08 * (7.0 * u).sin(), 0.08 * (5.0 * u).cos(), 0.05 * (3.0 * u).sin());
            let yaw = 0.08 * (4.0 * u).sin();
            let turn = Pose::from_quaternion(&UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw), Vector3::zeros());
            Pose { translation: base.translation + wobble, ..turn.compose(&base) }
        })
        .collect();
    let local_from_world = Pose::looking(
        Vector3::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), rng.random_range(-2.0..2.0)),
        rng.random_range(-PI..PI),
        rng.random_range(-0.5..0.5),
        rng.random_range(-0.5..0.5),
    );
    let queries: Vec<Frame> = query_truth
        .iter()
        .enumerate()
        .map(|(i, t)| Frame::new(i as f64 * config.frame_dt, local_from_world.compose(t), format!("query_{i:05}")))
        .collect();

    // Distractor places.
    let mut rng = stream(seed, 4);
    let mut distractors = Vec::with_capacity(config.distractors);
    let mut distractor_sources = Vec::with_capacity(config.distractors);
    for d in 0..config.distractors {
        distractor_sources.push(rng.random_range(0..config.frames));
        let pos = Vector3::new(rng.random_range(200.0..400.0), rng.random_range(-100.0..100.0), CAMERA_HEIGHT);
        let pose = Pose::looking(pos, rng.random_range(-PI..PI), rng.random_range(-0.2..0.2), 0.0);
        distractors.push(Frame::new(d as f64 * config.frame_dt, pose, format!("distractor_{d:05}")));
    }

    // Semantic rows: visible objects weighted by visible fraction.
    let semantic_of = |pose: &Pose| -> Vec<f32> {
        let mut v: Vec<f64> = background.iter().map(|b| 0.05 * b).collect();
        for (o, range) in objects.iter().zip(&object_points) {
            let pts = &scene[range.clone()];
            let frac = visible_points(pose, &cam, pts).len() as f64 / pts.len().max(1) as f64;
            for (x, c) in v.iter_mut().zip(&class_emb[o.class]) {
                *x += frac * c;
            }
        }
        crate::vector::normalize_f64(&mut v);
        v.into_iter().map(|x| x as f32).collect()
    };
    let map_sem: Vec<Vec<f32>> = map.par_iter().map(|f| semantic_of(&f.pose)).collect();
    let query_sem: Vec<Vec<f32>> = query_truth.par_iter().map(semantic_of).collect();

    // Localization rows with independent noise per stage.
    let mut map_rng = stream(seed, 5);
    let map_loc: Vec<Vec<f32>> = map.iter().map(|f| noisy(&field.eval(&f.pose), config.sigma_d, &mut map_rng)).collect();
    let mut q_rng = stream(seed, 6);
    let query_loc: Vec<Vec<f32>> =
        query_truth.iter().map(|t| noisy(&field.eval(t), config.sigma_d, &mut q_rng)).collect();
    let mut d_rng = stream(seed, 7);
    let dist_loc: Vec<Vec<f32>> = distractor_sources
        .iter()
        .map(|&s| noisy(&field.eval(&map[s].pose), config.sigma_d, &mut d_rng))
        .collect();

    // Depth clouds of the queries, camera frame.
    let query_clouds: Vec<Vec<Point>> = query_truth
        .par_iter()
        .map(|t| {
            let vis = visible_points(t, &cam, &scene);
            let stride = (vis.len() as f64 / config.cloud_points as f64).max(1.0);
            let mut out = Vec::with_capacity(config.cloud_points.min(vis.len()));
            let mut x = 0.0;
            while (x as usize) < vis.len() && out.len() < config.cloud_points {
                out.push(round_f32(t.inverse_transform_point(&scene[vis[x as usize]])));
                x += stride;
            }
            out
        })
        .collect();

    let mut sem_rows = Vec::new();
    let mut loc_rows = Vec::new();
    for ((f, s), l) in map.iter().zip(map_sem).zip(map_loc) {
        sem_rows.push((f.frame_id.clone(), s));
        loc_rows.push((f.frame_id.clone(), l));
    }
    for ((f, &src), l) in distractors.iter().zip(&distractor_sources).zip(dist_loc) {
        sem_rows.push((f.frame_id.clone(), sem_rows[src].1.clone()));
        loc_rows.push((f.frame_id.clone(), l));
    }
    for ((f, s), l) in queries.iter().zip(query_sem).zip(query_loc) {
        sem_rows.push((f.frame_id.clone(), s));
        loc_rows.push((f.frame_id.clone(), l));
    }
    let semantic = EmbeddingFile::from_rows(ElementType::F16, sem_rows).map_err(|e| e.to_string())?;
    let localization = EmbeddingFile::from_rows(ElementType::F32, loc_rows).map_err(|e| e.to_string())?;
    let classes = EmbeddingFile::from_rows(
        ElementType::F16,
        class_emb
            .iter()
            .enumerate()
            .map(|(c, e)| (format!("class_{c}"), e.iter().map(|&x| x as f32).collect()))
            .collect(),
    )
    .map_err(|e| e.to_string())?;

    Ok(SynthData {
        config: *config,
        seed,
        scene,
        objects,
        object_points,
        classes,
        map,
        distractors,
        distractor_sources,
        queries,
        query_truth,
        query_clouds,
        semantic,
        localization,
        field,
    })
}

impl SynthData {
    pub fn embedding_table(&self) -> EmbeddingTable {
        EmbeddingTable::new(self.semantic.clone(), self.localization.clone())
    }

    pub fn builder_config(&self) -> BuilderConfig {
        BuilderConfig {
            semantic_dim: self.config.semantic_dim,
            localization_dim: self.config.localization_dim,
            ..BuilderConfig::default()
        }
    }

    /// Graph over the map session followed by the distractor session.
    pub fn build_epg(&self, params: GridParams) -> Result<(Epg, BuildStats), BuildError> {
        let mut table = self.embedding_table();
        let mut sessions = vec![self.map.clone()];
        if !self.distractors.is_empty() {
            sessions.push(self.distractors.clone());
        }
        ingest_sessions(sessions, params, self.builder_config(), &mut table)
    }

    pub fn query_sequence(&self, with_clouds: bool) -> QuerySequence {
        let index = self.localization.index();
        QuerySequence {
            frame_ids: self.queries.iter().map(|f| f.frame_id.clone()).collect(),
            odometry: self.queries.iter().map(|f| f.pose).collect(),
            embeddings: self.queries.iter().map(|f| self.localization.row(index[f.frame_id.as_str()]).to_vec()).collect(),
            clouds: with_clouds.then(|| self.query_clouds.clone()),
        }
    }

    /// The `size` query frames around the middle of the query lap.
    pub fn sample_bundle(&self, size: usize) -> BundleFile {
        let seq = self.query_sequence(false);
        let w = bundle_window(seq.len(), seq.len() / 2, size);
        BundleFile {
            frame_ids: seq.frame_ids[w.clone()].to_vec(),
            bundle: Bundle::new(seq.odometry[w.clone()].to_vec(), seq.embeddings[w].to_vec())
                .expect("query sequence rows are consistent"),
        }
    }

    /// Writes the instance as standard files into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<(), IoError> {
        std::fs::create_dir_all(dir.join("depth")).map_err(|e| IoError::Io { path: dir.to_path_buf(), source: e })?;
        io::save_trajectory(&dir.join("map.traj"), &self.map)?;
        if !self.distractors.is_empty() {
            io::save_trajectory(&dir.join("distractors.traj"), &self.distractors)?;
        }
        io::save_trajectory(&dir.join("queries.traj"), &self.queries)?;
        let truth: Vec<Frame> = self
            .queries
            .iter()
            .zip(&self.query_truth)
            .map(|(q, t)| Frame::new(q.timestamp, *t, q.frame_id.clone()))
            .collect();
        io::save_trajectory(&dir.join("truth.traj"), &truth)?;
        io::save_embeddings(&dir.join("semantic.epge"), &self.semantic)?;
        io::save_embeddings(&dir.join("localization.epge"), &self.localization)?;
        io::save_embeddings(&dir.join("classes.epge"), &self.classes)?;
        io::save_pointcloud(&dir.join("scene.ply"), &self.scene, PlyEncoding::BinaryLittleEndian)?;
        io::save_bundle(&dir.join("bundle.txt"), &self.sample_bundle(DEFAULT_BUNDLE_SIZE))?;
        for (q, cloud) in self.queries.iter().zip(&self.query_clouds) {
            io::save_pointcloud(&dir.join("depth").join(format!("{}.ply", q.frame_id)), cloud, PlyEncoding::BinaryLittleEndian)?;
        }
        Ok(())
    }
}
