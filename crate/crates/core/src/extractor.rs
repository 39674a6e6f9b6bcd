//! Client for the external embedding extractor.
//!
//! The extractor is a separate executable, named by `EPG_EXTRACTOR`, invoked
//! as
//!
//! ```text
//! extractor --mode M --input LIST --out FILE [--vocab V --pca P]
//! ```
//!
//! where `LIST` holds one input (image path or text) per line and `FILE`
//! receives an embedding file whose frame ids repeat the inputs in order. In
//! `loc-features` mode an input may own several consecutive rows.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::str::FromStr;

use thiserror::Error;

use crate::builder::{EmbeddingProvider, Embeddings, ProviderError};
use crate::io::{load_embeddings, EmbeddingFile, IoError};

pub const EXTRACTOR_ENV: &str = "EPG_EXTRACTOR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExtractMode {
    ClipImage,
    ClipText,
    LocFeatures,
    LocDescriptor,
}

impl ExtractMode {
    pub fn name(self) -> &'static str {
        match self {
            ExtractMode::ClipImage => "clip-image",
            ExtractMode::ClipText => "clip-text",
            ExtractMode::LocFeatures => "loc-features",
            ExtractMode::LocDescriptor => "loc-descriptor",
        }
    }
}

impl fmt::Display for ExtractMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExtractMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [ExtractMode::ClipImage, ExtractMode::ClipText, ExtractMode::LocFeatures, ExtractMode::LocDescriptor]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown extractor mode '{s}'"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractRequest {
    pub mode: ExtractMode,
    pub inputs: Vec<String>,
    pub vocab: Option<PathBuf>,
    pub pca: Option<PathBuf>,
}

impl ExtractRequest {
    pub fn new(mode: ExtractMode, inputs: Vec<String>) -> Self {
        Self { mode, inputs, vocab: None, pca: None }
    }

    fn validate(&self) -> Result<(), ExtractorError> {
        if self.inputs.is_empty() {
            return Err(ExtractorError::Request("no inputs".into()));
        }
        if let Some(bad) = self.inputs.iter().find(|s| s.is_empty() || s.contains('\n') || s.contains('\r')) {
            return Err(ExtractorError::Request(format!("input {bad:?} cannot be passed on one line")));
        }
        let has = (self.vocab.is_some(), self.pca.is_some());
        match (self.mode, has) {
            (ExtractMode::LocDescriptor, (true, true)) => {}
            (ExtractMode::LocDescriptor, _) => {
                return Err(ExtractorError::Request("loc-descriptor needs both a vocabulary and a PCA transform".into()))
            }
            (_, (false, false)) => {}
            (mode, _) => return Err(ExtractorError::Request(format!("{mode} takes no vocabulary or PCA transform"))),
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ExtractorError {
    #[error("environment variable {EXTRACTOR_ENV} is not set")]
    NotConfigured,
    #[error("invalid extractor request: {0}")]
    Request(String),
    #[error("cannot run extractor {program}: {source}")]
    Spawn { program: PathBuf, source: std::io::Error },
    #[error("extractor exited with {code:?}: {stderr}")]
    Failed { code: Option<i32>, stderr: String },
    #[error("extractor output: {0}")]
    Output(#[from] IoError),
    #[error("extractor output does not match the request: {0}")]
    Contract(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Extractor {
    program: PathBuf,
}

impl Extractor {
    pub fn new(program: impl Into<PathBuf>) -> Self {
        Self { program: program.into() }
    }

    pub fn from_env() -> Result<Self, ExtractorError> {
        match std::env::var_os(EXTRACTOR_ENV) {
            Some(v) if !v.is_empty() => Ok(Self::new(v)),
            _ => Err(ExtractorError::NotConfigured),
        }
    }

    pub fn program(&self) -> &Path {
        &self.program
    }

    /// Runs one request and validates the returned file against it.
    pub fn run(&self, req: &ExtractRequest) -> Result<EmbeddingFile, ExtractorError> {
        req.validate()?;
        let dir = tempfile::tempdir().map_err(|e| ExtractorError::Spawn { program: self.program.clone(), source: e })?;
        let list = dir.path().join("inputs.txt");
        let out = dir.path().join("out.epge");
        let mut text = req.inputs.join("\n");
        text.push('\n');
        std::fs::write(&list, text).map_err(|e| ExtractorError::Spawn { program: self.program.clone(), source: e })?;

        let mut cmd = Command::new(&self.program);
        cmd.arg("--mode").arg(req.mode.name()).arg("--input").arg(&list).arg("--out").arg(&out);
        if let Some(v) = &req.vocab {
            cmd.arg("--vocab").arg(v);
        }
        if let Some(p) = &req.pca {
            cmd.arg("--pca").arg(p);
        }
        let output = cmd.output().map_err(|e| ExtractorError::Spawn { program: self.program.clone(), source: e })?;
        if !output.status.success() {
            return Err(ExtractorError::Failed {
                code: output.status.code(),
                stderr: String::from_utf8_lossy(&output.stderr).trim().to_string(),
            });
        }
        let file = load_embeddings(&out)?;
        check_contract(req, &file)?;
        Ok(file)
    }
}

fn check_contract(req: &ExtractRequest, file: &EmbeddingFile) -> Result<(), ExtractorError> {
    if req.mode == ExtractMode::LocFeatures {
        let groups: Vec<&str> = file.groups().into_iter().map(|(id, _)| id).collect();
        if groups != req.inputs.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(ExtractorError::Contract("feature groups do not follow the inputs in order".into()));
        }
        return Ok(());
    }
    if file.len() != req.inputs.len() {
        return Err(ExtractorError::Contract(format!("{} rows for {} inputs", file.len(), req.inputs.len())));
    }
    if let Some((i, _)) = file.frame_ids().iter().zip(&req.inputs).enumerate().find(|(_, (a, b))| a != b) {
        return Err(ExtractorError::Contract(format!("row {i} is labelled {:?}, expected {:?}", file.frame_ids()[i], req.inputs[i])));
    }
    Ok(())
}

/// Embeds frames on demand from images named `<dir>/<frame_id>.<ext>`.
#[derive(Debug)]
pub struct ExtractorProvider {
    extractor: Extractor,
    image_dir: PathBuf,
    extension: String,
    vocab: PathBuf,
    pca: PathBuf,
    cache: HashMap<String, Embeddings>,
}

impl ExtractorProvider {
    pub fn new(extractor: Extractor, image_dir: PathBuf, extension: &str, vocab: PathBuf, pca: PathBuf) -> Self {
        Self { extractor, image_dir, extension: extension.trim_start_matches('.').to_string(), vocab, pca, cache: HashMap::new() }
    }

    fn image_path(&self, frame_id: &str) -> String {
        self.image_dir.join(format!("{frame_id}.{}", self.extension)).to_string_lossy().into_owned()
    }

    /// Embeds many frames with two extractor calls and caches the results.
    pub fn prefetch(&mut self, frame_ids: &[String]) -> Result<(), ExtractorError> {
        let todo: Vec<&String> = frame_ids.iter().filter(|f| !self.cache.contains_key(f.as_str())).collect();
        if todo.is_empty() {
            return Ok(());
        }
        let paths: Vec<String> = todo.iter().map(|f| self.image_path(f)).collect();
        let sem = self.extractor.run(&ExtractRequest::new(ExtractMode::ClipImage, paths.clone()))?;
        let loc = self.extractor.run(&ExtractRequest {
            mode: ExtractMode::LocDescriptor,
            inputs: paths,
            vocab: Some(self.vocab.clone()),
            pca: Some(self.pca.clone()),
        })?;
        for (i, f) in todo.into_iter().enumerate() {
            self.cache.insert(f.clone(), Embeddings { semantic: sem.row(i).to_vec(), localization: loc.row(i).to_vec() });
        }
        Ok(())
    }
}

impl EmbeddingProvider for ExtractorProvider {
    fn embed(&mut self, frame_id: &str) -> Result<Embeddings, ProviderError> {
        if !self.cache.contains_key(frame_id) {
            self.prefetch(&[frame_id.to_string()]).map_err(|e| ProviderError(e.to_string()))?;
        }
        Ok(self.cache[frame_id].clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_validation() {
        let mut r = ExtractRequest::new(ExtractMode::ClipText, vec!["a chair".into()]);
        assert!(r.validate().is_ok());
        r.vocab = Some("v".into());
        assert!(r.validate().is_err());
        let mut d = ExtractRequest::new(ExtractMode::LocDescriptor, vec!["x.png".into()]);
        assert!(d.validate().is_err());
        d.vocab = Some("v".into());
        d.pca = Some("p".into());
        assert!(d.validate().is_ok());
        assert!(ExtractRequest::new(ExtractMode::ClipText, vec!["two\nlines".into()]).validate().is_err());
        assert!(ExtractRequest::new(ExtractMode::ClipText, vec![]).validate().is_err());
    }

    #[test]
    fn missing_program_is_a_spawn_error() {
        let e = Extractor::new("/nonexistent/extractor").run(&ExtractRequest::new(ExtractMode::ClipText, vec!["x".into()]));
        assert!(matches!(e, Err(ExtractorError::Spawn { .. })));
    }

    #[test]
    fn mode_names() {
        for m in ["clip-image", "clip-text", "loc-features", "loc-descriptor"] {
            assert_eq!(m.parse::<ExtractMode>().unwrap().name(), m);
        }
    }
}
