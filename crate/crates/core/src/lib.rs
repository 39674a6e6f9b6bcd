//! Embedding pose graphs: sparse, 5D-grid subsampled camera poses carrying
//! semantic and localization embeddings, with retrieval, navigation, bundle
//! re-localization and evaluation.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod builder;
pub mod config;
pub mod descriptor;
pub mod eval;
pub mod extractor;
pub mod grid;
pub mod harness;
pub mod io;
pub mod query;
pub mod reloc;
pub mod synth;
pub mod vector;

pub use builder::{
    ingest, ingest_sessions, merge, BuildError, BuildStats, BuilderConfig, EmbeddingProvider, Embeddings, Epg, EpgBuilder,
    EpgNode, Frame, ProviderError,
};
pub use config::{Profile, Settings};
pub use eval::{Intrinsics, Point, RecallThresholds};
pub use grid::{cell_center, pose_key, GridParams, Pose, PoseKey, ViewAngles};
pub use query::{top_k, Field, QueryHit, VectorSearch};
pub use reloc::{gaussian_vote, relocalize, relocalize_icp, Bundle, RelocEstimate, RelocMode, Vote, VoteParams};
