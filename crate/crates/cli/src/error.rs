use epg_core::builder::BuildError;
use epg_core::descriptor::DescriptorError;
use epg_core::eval::EvalError;
use epg_core::extractor::ExtractorError;
use epg_core::grid::GridError;
use epg_core::harness::HarnessError;
use epg_core::io::IoError;
use epg_core::query::QueryError;
use epg_core::reloc::RelocError;

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_COMPUTE: u8 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: msg.into() }
    }

    pub fn input(msg: impl Into<String>) -> Self {
        Self { code: EXIT_INPUT, message: msg.into() }
    }

    pub fn compute(msg: impl Into<String>) -> Self {
        Self { code: EXIT_COMPUTE, message: msg.into() }
    }
}

pub type CliResult<T> = Result<T, CliError>;

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::input(e.to_string())
    }
}

impl From<GridError> for CliError {
    fn from(e: GridError) -> Self {
        CliError::usage(e.to_string())
    }
}

impl From<BuildError> for CliError {
    fn from(e: BuildError) -> Self {
        match e {
            BuildError::Provider { .. } => CliError::compute(e.to_string()),
            BuildError::Config(_) => CliError::usage(e.to_string()),
            _ => CliError::input(e.to_string()),
        }
    }
}

impl From<QueryError> for CliError {
    fn from(e: QueryError) -> Self {
        match e {
            QueryError::DimensionMismatch { .. } | QueryError::UnknownKey(_) | QueryError::EmptyGraph => {
                CliError::input(e.to_string())
            }
            QueryError::ZeroK => CliError::usage(e.to_string()),
            QueryError::NoPath(..) => CliError::compute(e.to_string()),
        }
    }
}

impl From<RelocError> for CliError {
    fn from(e: RelocError) -> Self {
        match e {
            RelocError::InvalidParams => CliError::usage(e.to_string()),
            RelocError::Query(q) => q.into(),
            RelocError::EmptyBundle
            | RelocError::BundleMismatch { .. }
            | RelocError::MissingScene
            | RelocError::CloudCountMismatch { .. } => CliError::input(e.to_string()),
            RelocError::NoVotes => CliError::compute(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::input(e.to_string())
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Reloc(r) => r.into(),
            HarnessError::Eval(v) => v.into(),
        }
    }
}

impl From<DescriptorError> for CliError {
    fn from(e: DescriptorError) -> Self {
        match e {
            DescriptorError::Invalid(_) => CliError::usage(e.to_string()),
            DescriptorError::TooFewSamples { .. } | DescriptorError::RankDeficient { .. } => {
                CliError::compute(e.to_string())
            }
            _ => CliError::input(e.to_string()),
        }
    }
}

impl From<ExtractorError> for CliError {
    fn from(e: ExtractorError) -> Self {
        match e {
            ExtractorError::NotConfigured | ExtractorError::Request(_) => CliError::usage(e.to_string()),
            ExtractorError::Output(_) | ExtractorError::Contract(_) => CliError::input(e.to_string()),
            ExtractorError::Spawn { .. } | ExtractorError::Failed { .. } => CliError::compute(e.to_string()),
        }
    }
}
