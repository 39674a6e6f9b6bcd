use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;

use epg_core::builder::{ingest_sessions, BuildStats, Epg, EpgBuilder, Frame};
use epg_core::config::Settings;
use epg_core::descriptor::{fit_pca, fit_vocabulary, reduce, vlad, FeatureSet, VladVocabulary};
use epg_core::eval::{filter_queries, redundancy_of_poses, Point, RecallReport};
use epg_core::extractor::{ExtractMode, ExtractRequest, Extractor, ExtractorProvider};
use epg_core::grid::{view_angles, Pose, PoseKey};
use epg_core::harness::{recall_report, CandidateTable, HarnessConfig, QuerySequence};
use epg_core::io::{self, ElementType, EmbeddingFile, EmbeddingTable};
use epg_core::query::{disambiguate, path_length, top_k, waypoints, DisambiguationConfig, Field, OverlapModel, QueryHit};
use epg_core::reloc::{
    gaussian_vote, realign_votes, refine_candidates, retrieve_candidates, Bundle, RelocMode, SceneIndex,
};
use epg_core::synth::{generate, SynthConfig};
use epg_core::vector::normalize;

use crate::error::{CliError, CliResult};
use crate::options::*;

pub fn run(cli: Cli) -> CliResult<()> {
    let g = &cli.global;
    let settings = g.settings()?;
    let out = match cli.command {
        Command::Build(a) => build(&a, &settings, g.format)?,
        Command::Query(a) => query(&a, &settings, g.format)?,
        Command::Reloc(a) => reloc(&a, &settings, g.format)?,
        Command::Eval(a) => eval(&a, &settings, g.format)?,
        Command::Path(a) => path(&a, g.format)?,
        Command::Synth(a) => synth(&a, g.seed, g.format)?,
        Command::Vocab(a) => vocab(&a, &settings, g.seed, g.format)?,
        Command::Pca(a) => pca(&a, &settings, g.format)?,
        Command::Aggregate(a) => aggregate(&a, g.format)?,
    };
    print!("{out}");
    Ok(())
}

fn kv(format: Format, rows: &[(&str, String)]) -> String {
    let mut s = String::new();
    match format {
        Format::Text => {
            let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
            for (k, v) in rows {
                let _ = writeln!(s, "{:<width$}  {v}", format!("{k}:"), width = width + 1);
            }
        }
        Format::Csv => {
            s.push_str("key,value\n");
            for (k, v) in rows {
                let _ = writeln!(s, "{k},{v}");
            }
        }
    }
    s
}

fn pose_fields(p: &Pose) -> [f64; 7] {
    let q = p.to_quaternion();
    let t = p.translation;
    [t.x, t.y, t.z, q.i, q.j, q.k, q.w]
}

fn build(a: &BuildArgs, s: &Settings, format: Format) -> CliResult<String> {
    let mut sessions = Vec::with_capacity(a.trajectories.len());
    for t in &a.trajectories {
        sessions.push(io::load_trajectory(t)?);
    }
    if sessions.iter().all(Vec::is_empty) {
        return Err(CliError::input("no frames in the given trajectories"));
    }
    let base = a.base.as_deref().map(io::load_epg).transpose()?;

    let (epg, stats) = if let Some(dir) = &a.images {
        let (vocab, pca) = (a.vocab.clone().unwrap(), a.pca.clone().unwrap());
        let loc_dim = io::load_pca(&pca)?.components();
        let config = epg_core::builder::BuilderConfig {
            semantic_dim: a.semantic_dim,
            localization_dim: loc_dim,
            ..s.builder
        };
        let mut provider = ExtractorProvider::new(Extractor::from_env()?, dir.clone(), &a.ext, vocab, pca);
        run_builder(base, sessions, s, config, &mut provider)?
    } else {
        let (Some(sem), Some(loc)) = (&a.semantic, &a.localization) else {
            return Err(CliError::usage("give --semantic and --localization, or --images with --vocab and --pca"));
        };
        let mut table = EmbeddingTable::new(io::load_embeddings(sem)?, io::load_embeddings(loc)?);
        let config = epg_core::builder::BuilderConfig {
            semantic_dim: table.semantic_dim(),
            localization_dim: table.localization_dim(),
            ..s.builder
        };
        run_builder(base, sessions, s, config, &mut table)?
    };
    let bytes = io::encode_epg(&epg)?;
    io::write_atomic(&a.out, &bytes)?;
    Ok(kv(
        format,
        &[
            ("nodes", epg.len().to_string()),
            ("sessions", epg.session_ranges().len().to_string()),
            ("frames", stats.frames.to_string()),
            ("visits", stats.visits.to_string()),
            ("provider calls", stats.provider_calls.to_string()),
            ("size bytes", bytes.len().to_string()),
            ("size MiB", format!("{:.3}", bytes.len() as f64 / (1024.0 * 1024.0))),
            ("output", a.out.display().to_string()),
        ],
    ))
}

fn run_builder<P: epg_core::builder::EmbeddingProvider + ?Sized>(
    base: Option<Epg>,
    sessions: Vec<Vec<Frame>>,
    s: &Settings,
    config: epg_core::builder::BuilderConfig,
    provider: &mut P,
) -> CliResult<(Epg, BuildStats)> {
    match base {
        None => Ok(ingest_sessions(sessions, s.grid, config, provider)?),
        Some(epg) => {
            let mut b = EpgBuilder::extend(epg, config, provider)?;
            for (i, frames) in sessions.into_iter().enumerate() {
                if i > 0 {
                    b.next_session()?;
                }
                for f in frames {
                    b.push(f)?;
                }
            }
            Ok(b.finish()?)
        }
    }
}

fn query_vector(a: &QueryArgs, field: Field) -> CliResult<Vec<f32>> {
    if let Some(path) = &a.embedding {
        let file = io::load_embeddings(path)?;
        let row = match &a.row {
            None if file.is_empty() => return Err(CliError::input(format!("{} has no rows", path.display()))),
            None => 0,
            Some(id) => *file
                .index()
                .get(id.as_str())
                .ok_or_else(|| CliError::input(format!("{} has no row {id:?}", path.display())))?,
        };
        return Ok(file.row(row).to_vec());
    }
    if field == Field::Localization {
        return Err(CliError::usage("localization queries need --embedding"));
    }
    let req = match (&a.text, &a.image) {
        (Some(t), _) => ExtractRequest::new(ExtractMode::ClipText, vec![t.clone()]),
        (_, Some(p)) => ExtractRequest::new(ExtractMode::ClipImage, vec![p.to_string_lossy().into_owned()]),
        _ => return Err(CliError::usage("give one of --text, --image or --embedding")),
    };
    Ok(Extractor::from_env()?.run(&req)?.row(0).to_vec())
}

fn hits_table(epg: &Epg, hits: &[QueryHit], format: Format) -> String {
    let mut s = String::new();
    if format == Format::Csv {
        s.push_str("rank,key,score,x,y,z,theta_deg,phi_deg,frame_id\n");
    }
    for (r, h) in hits.iter().enumerate() {
        let n = epg.node_at(h.index);
        let a = view_angles(&n.pose);
        let t = n.pose.translation;
        let (th, ph) = (a.theta.to_degrees(), a.phi.to_degrees());
        match format {
            Format::Text => {
                let _ = writeln!(
                    s,
                    "{:>3}  {:<22} {:.4}  ({:.2}, {:.2}, {:.2})  yaw {:.0} pitch {:.0}  {}",
                    r + 1,
                    h.key.to_string(),
                    h.score,
                    t.x,
                    t.y,
                    t.z,
                    th,
                    ph,
                    n.frame_id
                );
            }
            Format::Csv => {
                let k = h.key;
                let _ = writeln!(
                    s,
                    "{},{} {} {} {} {},{:.6},{:.4},{:.4},{:.4},{:.2},{:.2},{}",
                    r + 1,
                    k.i,
                    k.j,
                    k.k,
                    k.l,
                    k.m,
                    h.score,
                    t.x,
                    t.y,
                    t.z,
                    th,
                    ph,
                    n.frame_id
                );
            }
        }
    }
    s
}

fn query(a: &QueryArgs, s: &Settings, format: Format) -> CliResult<String> {
    let epg = io::load_epg(&a.epg)?;
    let field = match a.field {
        FieldArg::Semantic => Field::Semantic,
        FieldArg::Localization => Field::Localization,
    };
    let mut q = query_vector(a, field)?;
    normalize(&mut q);
    let hits = top_k(&epg, &q, field, a.k)?;
    if !a.disambiguate {
        return Ok(hits_table(&epg, &hits, format));
    }

    let scene = a.scene.as_deref().map(io::load_pointcloud).transpose()?;
    let model = match &scene {
        Some(pts) => OverlapModel::Scene { scene: pts, cam: s.intrinsics },
        None => OverlapModel::Heuristic { fov: s.intrinsics.horizontal_fov(), dl: epg.params().dl },
    };
    let mut hits = hits;
    let stdin = std::io::stdin();
    let mut lines = stdin.lock().lines();
    loop {
        let d = disambiguate(&hits, &epg, model, DisambiguationConfig::default());
        let reps = d.representatives();
        let mut out = String::new();
        if d.heuristic {
            out.push_str("note: no scene cloud given, view overlap is estimated from poses\n");
        }
        if !d.needs_clarification || a.no_prompt {
            let _ = writeln!(out, "{} distinct place(s)", reps.len());
            out.push_str(&hits_table(&epg, &reps, format));
            return Ok(out);
        }
        let _ = writeln!(out, "{} distinct places match equally well:", reps.len());
        out.push_str(&hits_table(&epg, &reps, Format::Text));
        out.push_str("pick a number, or describe the place further: ");
        print!("{out}");
        let _ = std::io::Write::flush(&mut std::io::stdout());

        let Some(line) = lines.next() else {
            println!();
            return Ok(String::new());
        };
        let line = line.map_err(|e| CliError::input(format!("stdin: {e}")))?;
        let line = line.trim();
        if line.is_empty() || line == "q" {
            return Ok(String::new());
        }
        if let Ok(n) = line.parse::<usize>() {
            if (1..=reps.len()).contains(&n) {
                return Ok(hits_table(&epg, &reps[n - 1..n], format));
            }
            println!("choose between 1 and {}", reps.len());
            continue;
        }
        let extra = Extractor::from_env()?.run(&ExtractRequest::new(ExtractMode::ClipText, vec![line.to_string()]))?;
        if extra.dim() != q.len() {
            return Err(CliError::input("refinement embedding width differs from the query"));
        }
        for (a, b) in q.iter_mut().zip(extra.row(0)) {
            *a += *b;
        }
        normalize(&mut q);
        hits = top_k(&epg, &q, field, a.k)?;
    }
}

fn load_clouds(dir: &Path, ids: &[String]) -> CliResult<Vec<Vec<Point>>> {
    ids.iter().map(|id| Ok(io::load_pointcloud(&dir.join(format!("{id}.ply")))?)).collect()
}

fn reloc(a: &RelocArgs, s: &Settings, format: Format) -> CliResult<String> {
    let epg = io::load_epg(&a.epg)?;
    let file = io::load_bundle(&a.bundle)?;
    let n = file.bundle.len();
    let window = epg_core::harness::bundle_window(n, file.bundle.mid_index(), s.bundle_size.min(n));
    let ids = file.frame_ids[window.clone()].to_vec();
    let bundle = Bundle::new(file.bundle.poses()[window.clone()].to_vec(), file.bundle.queries()[window].to_vec())?;

    let mode = a.mode.unwrap_or(match (a.scene.is_some(), bundle.len() > 1) {
        (false, true) => RelocMode::Bundle,
        (false, false) => RelocMode::Simple,
        (true, true) => RelocMode::IcpBundle,
        (true, false) => RelocMode::Icp,
    });
    if mode.uses_icp() && a.scene.is_none() {
        return Err(CliError::usage(format!("mode {mode} needs --scene and --depth")));
    }
    let mid = bundle.mid_index();
    let bundle = if mode.uses_bundle() {
        bundle
    } else {
        Bundle::new(vec![bundle.poses()[mid]], vec![bundle.queries()[mid].clone()])?
    };
    let frame_ids = if mode.uses_bundle() { ids.clone() } else { vec![ids[mid].clone()] };

    let mut cands = retrieve_candidates(&epg, &bundle, s.candidates)?;
    if mode.uses_icp() {
        let scene = SceneIndex::new(io::load_pointcloud(a.scene.as_ref().unwrap())?);
        let clouds = load_clouds(a.depth.as_ref().unwrap(), &frame_ids)?;
        cands = refine_candidates(&cands, &clouds, &scene, &s.icp)?;
    }
    let (pose, score) = if mode.uses_bundle() {
        let e = gaussian_vote(&realign_votes(&bundle, &cands), &s.vote)?;
        (e.pose, e.score)
    } else {
        let c = cands[0].first().ok_or(epg_core::reloc::RelocError::NoVotes)?;
        (c.pose, c.similarity)
    };
    let f = pose_fields(&pose);
    let frame = &ids[mid];
    Ok(match format {
        Format::Text => {
            let mut o = String::new();
            let _ = writeln!(o, "mode:   {mode}");
            let _ = writeln!(o, "frame:  {frame}");
            let _ = writeln!(o, "pose:   {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}", f[0], f[1], f[2], f[3], f[4], f[5], f[6]);
            let _ = writeln!(o, "score:  {score:.6}");
            o
        }
        Format::Csv => format!(
            "mode,frame_id,tx,ty,tz,qx,qy,qz,qw,score\n{mode},{frame},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{score:.6}\n",
            f[0], f[1], f[2], f[3], f[4], f[5], f[6]
        ),
    })
}

fn eval(a: &EvalArgs, s: &Settings, format: Format) -> CliResult<String> {
    let epg = io::load_epg(&a.epg)?;
    let queries = io::load_trajectory(&a.queries)?;
    let truth = io::load_trajectory(&a.truth)?;
    if queries.is_empty() {
        return Err(CliError::input("no query frames"));
    }
    if queries.len() != truth.len() || queries.iter().zip(&truth).any(|(q, t)| q.frame_id != t.frame_id) {
        return Err(CliError::input("query and ground-truth trajectories must list the same frame ids in order"));
    }
    let emb = io::load_embeddings(&a.embeddings)?;
    let index = emb.index();
    let ids: Vec<String> = queries.iter().map(|f| f.frame_id.clone()).collect();
    let mut embeddings = Vec::with_capacity(ids.len());
    for id in &ids {
        let r = index.get(id.as_str()).ok_or_else(|| CliError::input(format!("no embedding for frame {id}")))?;
        embeddings.push(emb.row(*r).to_vec());
    }
    let clouds = a.depth.as_deref().map(|d| load_clouds(d, &ids)).transpose()?;
    let scene_pts = a.scene.as_deref().map(io::load_pointcloud).transpose()?;

    let modes: Vec<RelocMode> = if a.modes.is_empty() {
        RelocMode::ALL.into_iter().filter(|m| !m.uses_icp() || clouds.is_some()).collect()
    } else {
        a.modes.clone()
    };
    if modes.iter().any(|m| m.uses_icp()) && clouds.is_none() {
        return Err(CliError::usage("ICP modes need --scene and --depth"));
    }
    let seq = QuerySequence {
        frame_ids: ids,
        odometry: queries.iter().map(|f| f.pose).collect(),
        embeddings,
        clouds,
    };
    let truths: Vec<Pose> = truth.iter().map(|f| f.pose).collect();
    let indices: Vec<usize> = if a.all_queries {
        (0..truths.len()).collect()
    } else {
        filter_queries(&truths, &epg, &s.coarse, s.dedupe_dist, s.dedupe_ang)
    };
    if indices.is_empty() {
        return Err(CliError::compute("no query has a graph node within the coarse thresholds"));
    }
    let cfg = HarnessConfig { bundle_size: s.bundle_size, candidates: s.candidates, vote: s.vote, icp: s.icp, top: 5 };
    let scene = match (&scene_pts, &seq.clouds) {
        (Some(p), Some(_)) => Some(SceneIndex::new(p.clone())),
        _ => None,
    };
    let table = CandidateTable::build(&epg, &seq, &cfg, scene.as_ref())?;
    let mut report: RecallReport = recall_report(&table, &seq, &truths, &modes, &indices, &cfg, &s.coarse, &s.fine)?;
    if let Some(pts) = &scene_pts {
        let poses: Vec<Pose> = epg.nodes().map(|n| n.pose).collect();
        let r = redundancy_of_poses(&poses, &s.intrinsics, pts, &[50.0, 25.0])?;
        report.redundancy = Some((r[0], r[1]));
    }
    Ok(match format {
        Format::Text => report.render_text(),
        Format::Csv => report.to_long_csv(),
    })
}

fn resolve_node(epg: &Epg, spec: &str) -> CliResult<PoseKey> {
    let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
    if parts.len() == 5 {
        let v: Result<Vec<i32>, _> = parts.iter().map(|p| p.parse::<i32>()).collect();
        if let Ok(v) = v {
            return Ok(PoseKey::new(v[0], v[1], v[2], v[3], v[4]));
        }
    }
    epg.nodes()
        .find(|n| n.frame_id == spec)
        .map(|n| n.key)
        .ok_or_else(|| CliError::input(format!("no node with frame id or key {spec:?}")))
}

fn path(a: &PathArgs, format: Format) -> CliResult<String> {
    let epg = io::load_epg(&a.epg)?;
    let from = resolve_node(&epg, &a.from)?;
    let to = resolve_node(&epg, &a.to)?;
    let keys = waypoints(&epg, from, to)?;
    let hits: Vec<QueryHit> = keys
        .iter()
        .map(|k| {
            let n = epg.get(k).unwrap();
            QueryHit { key: *k, score: n.score, index: n.insertion_index }
        })
        .collect();
    let mut s = hits_table(&epg, &hits, format);
    if format == Format::Text {
        let _ = writeln!(s, "{} waypoints, {:.2} m", keys.len(), path_length(&epg, &keys));
    }
    Ok(s)
}

fn synth(a: &SynthArgs, seed: u64, format: Format) -> CliResult<String> {
    let d = SynthConfig::default();
    let cfg = SynthConfig {
        trajectory: a.trajectory,
        frames: a.frames.unwrap_or(d.frames),
        query_frames: a.query_frames.unwrap_or(d.query_frames),
        scene_points: a.scene_points.unwrap_or(d.scene_points),
        sigma_d: a.sigma_d.unwrap_or(d.sigma_d),
        distractors: a.distractors.unwrap_or(d.distractors),
        ..d
    };
    let data = generate(&cfg, seed).map_err(CliError::usage)?;
    data.write_dir(&a.out)?;
    Ok(kv(
        format,
        &[
            ("map frames", data.map.len().to_string()),
            ("query frames", data.queries.len().to_string()),
            ("distractor frames", data.distractors.len().to_string()),
            ("scene points", data.scene.len().to_string()),
            ("seed", seed.to_string()),
            ("output", a.out.display().to_string()),
        ],
    ))
}

fn feature_sets(path: &Path) -> CliResult<(Vec<String>, Vec<FeatureSet>)> {
    let file = io::load_embeddings(path)?;
    let mut ids = Vec::new();
    let mut sets = Vec::new();
    for (id, range) in file.groups() {
        let data: Vec<f64> = range.flat_map(|r| file.row(r).iter().map(|&v| v as f64)).collect();
        sets.push(FeatureSet::new(file.dim(), data)?);
        ids.push(id.to_string());
    }
    if sets.is_empty() {
        return Err(CliError::input(format!("{} holds no features", path.display())));
    }
    Ok((ids, sets))
}

fn vlads(sets: &[FeatureSet], vocab: &VladVocabulary) -> CliResult<Vec<Vec<f64>>> {
    sets.iter().map(|f| Ok(vlad(f, vocab)?)).collect()
}

fn vocab(a: &VocabArgs, s: &Settings, seed: u64, format: Format) -> CliResult<String> {
    let (_, sets) = feature_sets(&a.features)?;
    let v = fit_vocabulary(&sets, s.vlad_k, seed)?;
    io::save_vocabulary(&a.out, &v)?;
    Ok(kv(
        format,
        &[
            ("images", sets.len().to_string()),
            ("centers", v.k().to_string()),
            ("feature dim", v.dim().to_string()),
            ("output", a.out.display().to_string()),
        ],
    ))
}

fn pca(a: &PcaArgs, s: &Settings, format: Format) -> CliResult<String> {
    let (_, sets) = feature_sets(&a.features)?;
    let v = io::load_vocabulary(&a.vocab)?;
    let t = fit_pca(&vlads(&sets, &v)?, s.pca_dim)?;
    io::save_pca(&a.out, &t)?;
    Ok(kv(
        format,
        &[
            ("images", sets.len().to_string()),
            ("input dim", t.input_dim().to_string()),
            ("components", t.components().to_string()),
            ("output", a.out.display().to_string()),
        ],
    ))
}

fn aggregate(a: &AggregateArgs, format: Format) -> CliResult<String> {
    let (ids, sets) = feature_sets(&a.features)?;
    let v = io::load_vocabulary(&a.vocab)?;
    let t = io::load_pca(&a.pca)?;
    let mut rows = Vec::with_capacity(ids.len());
    let mut seen = HashMap::new();
    for (id, d) in ids.into_iter().zip(vlads(&sets, &v)?) {
        if seen.insert(id.clone(), ()).is_some() {
            return Err(CliError::input(format!("frame {id} appears in two separate runs of features")));
        }
        let r = reduce(&d, &t)?;
        rows.push((id, r.into_iter().map(|x| x as f32).collect()));
    }
    let n = rows.len();
    let file = EmbeddingFile::from_rows(ElementType::F32, rows)?;
    io::save_embeddings(&a.out, &file)?;
    Ok(kv(
        format,
        &[("images", n.to_string()), ("dim", t.components().to_string()), ("output", a.out.display().to_string())],
    ))
}
