//! Subprocess contract of the embedding extractor, exercised with a small
//! stand-in script that writes embedding files the same way the real one does.
#![cfg(unix)]

use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};

use epg_core::builder::{ingest_sessions, BuilderConfig, EmbeddingProvider, Frame};
use epg_core::extractor::{ExtractMode, ExtractRequest, Extractor, ExtractorError, ExtractorProvider, EXTRACTOR_ENV};
use epg_core::grid::{GridParams, Pose};
use epg_core::io::ElementType;
use nalgebra::Vector3;

/// Deterministic vectors per input. Inputs starting with `!` select a
/// misbehaviour: `!fail`, `!rename`, `!short`, `!garbage`, `!noout`.
const SCRIPT: &str = r#"#!/usr/bin/env python3
import argparse, hashlib, os, struct, sys, zlib

ap = argparse.ArgumentParser()
ap.add_argument("--mode", required=True)
ap.add_argument("--input", required=True)
ap.add_argument("--out", required=True)
ap.add_argument("--vocab")
ap.add_argument("--pca")
a = ap.parse_args()

with open(a.input, encoding="utf-8") as f:
    inputs = [l.rstrip("\n") for l in f if l.strip()]

with open(os.path.join(os.path.dirname(os.path.abspath(__file__)), "calls.log"), "a") as log:
    log.write(f"{a.mode} {len(inputs)} {a.vocab or '-'} {a.pca or '-'}\n")

if "!fail" in inputs:
    sys.stderr.write("model weights not found\n")
    sys.exit(3)
if "!noout" in inputs:
    sys.exit(0)
if "!garbage" in inputs:
    open(a.out, "wb").write(b"not an embedding file")
    sys.exit(0)

if a.mode in ("clip-image", "loc-descriptor", "loc-features"):
    for p in inputs:
        if not p.startswith("!") and not os.path.exists(p):
            sys.stderr.write(f"cannot open {p}\n")
            sys.exit(2)

dim, elem = {"clip-image": (8, 1), "clip-text": (8, 1), "loc-descriptor": (6, 2), "loc-features": (4, 2)}[a.mode]

def vec(s, d):
    h = hashlib.sha256((a.mode + s).encode()).digest()
    return [(h[i % len(h)] - 128) / 128.0 for i in range(d)]

ids, rows = [], []
for s in inputs:
    n = 1 + len(s) % 3 if a.mode == "loc-features" else 1
    for r in range(n):
        ids.append(s)
        rows.append(vec(f"{s}#{r}", dim))
if "!rename" in inputs:
    ids[0] = ids[0] + "x"
if "!short" in inputs:
    ids, rows = ids[:-1], rows[:-1]

buf = bytearray(b"EPGE") + struct.pack("<HBQI", 1, elem, len(rows), dim)
for i in ids:
    b = i.encode()
    buf += struct.pack("<I", len(b)) + b
fmt = "<e" if elem == 1 else "<f"
for r in rows:
    for v in r:
        buf += struct.pack(fmt, v)
buf += struct.pack("<I", zlib.crc32(bytes(buf)) & 0xFFFFFFFF)
open(a.out, "wb").write(bytes(buf))
"#;

fn install(dir: &Path) -> PathBuf {
    let path = dir.join("extractor.py");
    std::fs::write(&path, SCRIPT).unwrap();
    std::fs::set_permissions(&path, std::fs::Permissions::from_mode(0o755)).unwrap();
    path
}

fn calls(dir: &Path) -> Vec<String> {
    std::fs::read_to_string(dir.join("calls.log")).unwrap_or_default().lines().map(String::from).collect()
}

fn text_request(inputs: &[&str]) -> ExtractRequest {
    ExtractRequest::new(ExtractMode::ClipText, inputs.iter().map(|s| s.to_string()).collect())
}

#[test]
fn text_embeddings_follow_the_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let ex = Extractor::new(install(dir.path()));
    let f = ex.run(&text_request(&["a red chair", "the kitchen sink", "a red chair"])).unwrap();
    assert_eq!(f.element(), ElementType::F16);
    assert_eq!(f.dim(), 8);
    assert_eq!(f.frame_ids(), ["a red chair", "the kitchen sink", "a red chair"]);
    assert_eq!(f.row(0), f.row(2));
    assert_ne!(f.row(0), f.row(1));
    let again = ex.run(&text_request(&["a red chair", "the kitchen sink", "a red chair"])).unwrap();
    assert_eq!(again, f);
    assert_eq!(calls(dir.path()), ["clip-text 3 - -", "clip-text 3 - -"]);
}

#[test]
fn feature_groups_may_span_several_rows() {
    let dir = tempfile::tempdir().unwrap();
    let ex = Extractor::new(install(dir.path()));
    let imgs: Vec<String> = ["a", "bb", "ccc"].iter().map(|n| {
        let p = dir.path().join(format!("{n}.png"));
        std::fs::write(&p, b"").unwrap();
        p.to_string_lossy().into_owned()
    }).collect();
    let f = ex.run(&ExtractRequest::new(ExtractMode::LocFeatures, imgs.clone())).unwrap();
    let groups = f.groups();
    assert_eq!(groups.len(), 3);
    for ((id, range), want) in groups.iter().zip(&imgs) {
        assert_eq!(id, want);
        assert_eq!(range.len(), 1 + want.len() % 3);
    }
}

#[test]
fn descriptor_mode_passes_the_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let ex = Extractor::new(install(dir.path()));
    let img = dir.path().join("x.png");
    std::fs::write(&img, b"").unwrap();
    let req = ExtractRequest {
        mode: ExtractMode::LocDescriptor,
        inputs: vec![img.to_string_lossy().into_owned()],
        vocab: Some("vocab.epgv".into()),
        pca: Some("pca.epgp".into()),
    };
    let f = ex.run(&req).unwrap();
    assert_eq!((f.element(), f.dim(), f.len()), (ElementType::F32, 6, 1));
    assert_eq!(calls(dir.path()), ["loc-descriptor 1 vocab.epgv pca.epgp"]);
}

#[test]
fn contract_violations_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let ex = Extractor::new(install(dir.path()));
    match ex.run(&text_request(&["ok", "!fail"])) {
        Err(ExtractorError::Failed { code, stderr }) => {
            assert_eq!(code, Some(3));
            assert_eq!(stderr, "model weights not found");
        }
        other => panic!("expected a failure, got {other:?}"),
    }
    assert!(matches!(ex.run(&text_request(&["!rename", "b"])), Err(ExtractorError::Contract(_))));
    assert!(matches!(ex.run(&text_request(&["a", "!short"])), Err(ExtractorError::Contract(_))));
    assert!(matches!(ex.run(&text_request(&["!garbage"])), Err(ExtractorError::Output(_))));
    assert!(matches!(ex.run(&text_request(&["!noout"])), Err(ExtractorError::Output(_))));
    let missing = ExtractRequest::new(ExtractMode::ClipImage, vec![dir.path().join("nope.png").to_string_lossy().into_owned()]);
    assert!(matches!(ex.run(&missing), Err(ExtractorError::Failed { code: Some(2), .. })));
}

#[test]
fn program_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let script = install(dir.path());
    // The only test in this binary that touches the variable.
    std::env::remove_var(EXTRACTOR_ENV);
    assert!(matches!(Extractor::from_env(), Err(ExtractorError::NotConfigured)));
    std::env::set_var(EXTRACTOR_ENV, "");
    assert!(matches!(Extractor::from_env(), Err(ExtractorError::NotConfigured)));
    std::env::set_var(EXTRACTOR_ENV, &script);
    let ex = Extractor::from_env().unwrap();
    std::env::remove_var(EXTRACTOR_ENV);
    assert_eq!(ex.program(), script);
    assert_eq!(ex.run(&text_request(&["hello"])).unwrap().len(), 1);
}

#[test]
fn provider_embeds_frames_in_batches() {
    let dir = tempfile::tempdir().unwrap();
    let ex = Extractor::new(install(dir.path()));
    let images = dir.path().join("images");
    std::fs::create_dir(&images).unwrap();
    let frames: Vec<Frame> = (0..40)
        .map(|i| {
            let id = format!("img{i:03}");
            std::fs::write(images.join(format!("{id}.jpg")), b"").unwrap();
            Frame::new(i as f64 * 0.5, Pose::looking(Vector3::new(0.05 * i as f64, 0.0, 1.0), 0.0, 0.0, 0.0), id)
        })
        .collect();
    let mut provider = ExtractorProvider::new(ex, images, ".jpg", "v.epgv".into(), "p.epgp".into());
    let ids: Vec<String> = frames.iter().map(|f| f.frame_id.clone()).collect();
    provider.prefetch(&ids).unwrap();
    assert_eq!(calls(dir.path()).len(), 2);

    let cfg = BuilderConfig { semantic_dim: 8, localization_dim: 6, ..Default::default() };
    let (epg, _) = ingest_sessions([frames], GridParams::indoor(), cfg, &mut provider).unwrap();
    assert!(!epg.is_empty());
    assert_eq!(calls(dir.path()).len(), 2, "cached frames must not reach the extractor again");
    let first = provider.embed("img000").unwrap();
    assert_eq!((first.semantic.len(), first.localization.len()), (8, 6));

    assert!(provider.embed("img999").is_err());
}
