use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use epg_core::config::{Profile, Settings};
use epg_core::grid::GridParams;
use epg_core::reloc::RelocMode;
use epg_core::synth::TrajectoryKind;

use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "epg", version, about = "Embedding pose graphs: build, query, re-localize, evaluate")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Csv,
}

/// Parameters shared by all commands. Angles are in degrees; unset values
/// come from the profile.
#[derive(Debug, Args)]
pub struct GlobalOpts {
    /// Parameter preset.
    #[arg(long, global = true, default_value = "indoor", value_parser = parse_profile)]
    pub profile: Profile,
    /// Spatial cell size in meters.
    #[arg(long, global = true)]
    pub dl: Option<f64>,
    /// Azimuth step of the view grid, degrees.
    #[arg(long, global = true)]
    pub dtheta: Option<f64>,
    /// Elevation step of the view grid, degrees.
    #[arg(long, global = true)]
    pub dphi: Option<f64>,
    /// Seconds during which a committed cell ignores revisits.
    #[arg(long, global = true)]
    pub revisit_window: Option<f64>,
    /// Bundle size.
    #[arg(long, global = true)]
    pub kb: Option<usize>,
    /// Candidates retrieved per bundle frame.
    #[arg(long, global = true)]
    pub kc: Option<usize>,
    /// Positional vote kernel width in meters.
    #[arg(long, global = true)]
    pub sigma_xyz: Option<f64>,
    /// Angular vote kernel width, degrees.
    #[arg(long, global = true)]
    pub sigma_ang: Option<f64>,
    #[arg(long, global = true)]
    pub pca_dim: Option<usize>,
    /// VLAD vocabulary size.
    #[arg(long, global = true)]
    pub vlad_k: Option<usize>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

fn parse_profile(s: &str) -> Result<Profile, String> {
    s.parse()
}

fn parse_mode(s: &str) -> Result<RelocMode, String> {
    s.parse()
}

fn parse_trajectory_kind(s: &str) -> Result<TrajectoryKind, String> {
    s.parse()
}

impl GlobalOpts {
    pub fn settings(&self) -> CliResult<Settings> {
        let mut s = self.profile.settings();
        let dl = self.dl.unwrap_or(s.grid.dl);
        let dt = self.dtheta.map_or(s.grid.d_theta, f64::to_radians);
        let dp = self.dphi.map_or(s.grid.d_phi, f64::to_radians);
        s.grid = GridParams::new(dl, dt, dp)?;
        if self.dl.is_some() {
            s.icp = epg_core::reloc::IcpConfig::for_cell_size(dl);
        }
        if let Some(w) = self.revisit_window {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(CliError::usage("--revisit-window must be a non-negative number of seconds"));
            }
            s.builder.revisit_window = w;
        }
        if let Some(kb) = self.kb {
            if kb == 0 {
                return Err(CliError::usage("--kb must be at least 1"));
            }
            s.bundle_size = kb;
        }
        if let Some(kc) = self.kc {
            if kc == 0 {
                return Err(CliError::usage("--kc must be at least 1"));
            }
            s.candidates = kc;
        }
        if let Some(v) = self.sigma_xyz {
            s.vote.sigma_xyz = v;
        }
        if let Some(v) = self.sigma_ang {
            s.vote.sigma_ang = v.to_radians();
        }
        s.vote.validate()?;
        if let Some(v) = self.pca_dim {
            s.pca_dim = v;
        }
        if let Some(v) = self.vlad_k {
            s.vlad_k = v;
        }
        Ok(s)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a graph from trajectories and per-frame embeddings.
    Build(BuildArgs),
    /// Rank graph nodes against a text, image or embedding query.
    Query(QueryArgs),
    /// Estimate the pose of a query bundle.
    Reloc(RelocArgs),
    /// Recall table of every re-localization mode over a query sequence.
    Eval(EvalArgs),
    /// Shortest chain of recorded poses between two nodes.
    Path(PathArgs),
    /// Write a synthetic dataset.
    Synth(SynthArgs),
    /// Fit a VLAD vocabulary to local features.
    Vocab(VocabArgs),
    /// Fit a PCA transform to VLAD descriptors.
    Pca(PcaArgs),
    /// Turn local features into compact localization descriptors.
    Aggregate(AggregateArgs),
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Trajectory file; repeat for several capture sessions.
    #[arg(long = "trajectory", required = true)]
    pub trajectories: Vec<PathBuf>,
    /// Precomputed semantic embeddings keyed by frame id.
    #[arg(long, requires = "localization", conflicts_with = "images")]
    pub semantic: Option<PathBuf>,
    /// Precomputed localization embeddings keyed by frame id.
    #[arg(long, requires = "semantic")]
    pub localization: Option<PathBuf>,
    /// Image directory for on-demand extraction; images are `<frame_id>.<ext>`.
    #[arg(long, requires_all = ["vocab", "pca"])]
    pub images: Option<PathBuf>,
    #[arg(long, default_value = "png")]
    pub ext: String,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub pca: Option<PathBuf>,
    /// Semantic embedding width produced by the extractor.
    #[arg(long, default_value_t = epg_core::builder::DEFAULT_SEMANTIC_DIM)]
    pub semantic_dim: usize,
    /// Extend this graph instead of starting from scratch.
    #[arg(long)]
    pub base: Option<PathBuf>,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FieldArg {
    Semantic,
    Localization,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub epg: PathBuf,
    /// Free-text query, embedded by the extractor.
    #[arg(long, group = "source")]
    pub text: Option<String>,
    /// Query image, embedded by the extractor.
    #[arg(long, group = "source")]
    pub image: Option<PathBuf>,
    /// Embedding file holding the query vector.
    #[arg(long, group = "source")]
    pub embedding: Option<PathBuf>,
    /// Row of the embedding file to use; defaults to the first.
    #[arg(long, requires = "embedding")]
    pub row: Option<String>,
    #[arg(long, value_enum, default_value_t = FieldArg::Semantic)]
    pub field: FieldArg,
    #[arg(long, short, default_value_t = 5)]
    pub k: usize,
    /// Group near-equal matches by view overlap and ask which one is meant.
    #[arg(long)]
    pub disambiguate: bool,
    /// Scene cloud used for view overlap; without it overlap is estimated.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Print the clusters without prompting.
    #[arg(long)]
    pub no_prompt: bool,
}

#[derive(Debug, Args)]
pub struct RelocArgs {
    #[arg(long)]
    pub epg: PathBuf,
    /// Bundle file: one line per frame with odometry and localization query.
    #[arg(long)]
    pub bundle: PathBuf,
    /// Defaults to bundle voting, with ICP when a scene is given.
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<RelocMode>,
    #[arg(long, requires = "depth")]
    pub scene: Option<PathBuf>,
    /// Directory of per-frame depth clouds, `<frame_id>.ply`, in camera coordinates.
    #[arg(long, requires = "scene")]
    pub depth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub epg: PathBuf,
    /// Query trajectory holding local odometry.
    #[arg(long)]
    pub queries: PathBuf,
    /// Ground-truth poses of the queries in the map frame, same frame ids.
    #[arg(long)]
    pub truth: PathBuf,
    /// Localization embeddings of the query frames.
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Scene cloud for ICP modes and redundancy indices.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long, requires = "scene")]
    pub depth: Option<PathBuf>,
    /// Comma-separated modes; defaults to all that the inputs allow.
    #[arg(long, value_delimiter = ',', value_parser = parse_mode)]
    pub modes: Vec<RelocMode>,
    /// Evaluate every query instead of the filtered, de-duplicated subset.
    #[arg(long)]
    pub all_queries: bool,
}

#[derive(Debug, Args)]
pub struct PathArgs {
    #[arg(long)]
    pub epg: PathBuf,
    /// Start node, as a frame id or `i,j,k,l,m`.
    #[arg(long)]
    pub from: String,
    #[arg(long)]
    pub to: String,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long, default_value = "loop", value_parser = parse_trajectory_kind)]
    pub trajectory: TrajectoryKind,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub query_frames: Option<usize>,
    #[arg(long)]
    pub scene_points: Option<usize>,
    /// Descriptor noise level.
    #[arg(long)]
    pub sigma_d: Option<f64>,
    /// Number of far-away places that alias map descriptors.
    #[arg(long)]
    pub distractors: Option<usize>,
}

#[derive(Debug, Args)]
pub struct VocabArgs {
    /// Local features, several rows per frame id.
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PcaArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub pca: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
}
