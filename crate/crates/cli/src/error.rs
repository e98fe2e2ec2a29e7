use std::fmt;
use std::io;
use std::path::Path;
use std::process::ExitCode;

use aerotri::features::FeatureError;
use aerotri::geo::GeoError;
use aerotri::georef_eval::GeorefError;
use aerotri::matching::MatchError;
use aerotri::pipeline::PipelineError;
use aerotri::synth::SynthError;

/// Exit status class of a failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Failure {
    /// Bad flags, missing or unwritable paths.
    Config,
    /// Malformed or inconsistent input files.
    Data,
    /// Estimation did not succeed on otherwise valid input.
    Numerical,
}

impl Failure {
    pub fn exit_code(self) -> ExitCode {
        ExitCode::from(match self {
            Failure::Config => 2,
            Failure::Data => 3,
            Failure::Numerical => 4,
        })
    }
}

/// A stage failure with its cause.
#[derive(Debug)]
pub struct CliError {
    pub stage: &'static str,
    pub kind: Failure,
    pub message: String,
}

impl CliError {
    pub fn new(stage: &'static str, kind: Failure, message: impl Into<String>) -> Self {
        Self {
            stage,
            kind,
            message: message.into(),
        }
    }

    pub fn io(stage: &'static str, path: &Path, e: io::Error) -> Self {
        Self::new(stage, io_failure(&e), format!("{}: {e}", path.display()))
    }

    pub fn pipeline(stage: &'static str, e: PipelineError) -> Self {
        let kind = match &e {
            PipelineError::Io { source, .. } => io_failure(source),
            PipelineError::Matching(m) => match_failure(m),
            PipelineError::Sfm(_) => Failure::Numerical,
            PipelineError::Georef(g) => georef_failure(g),
            PipelineError::TooFewImages(_)
            | PipelineError::NotProjected(_)
            | PipelineError::MissingPos(_)
            | PipelineError::DescriptorMismatch { .. }
            | PipelineError::Feature { .. }
            | PipelineError::Format { .. } => Failure::Data,
        };
        Self::new(stage, kind, e.to_string())
    }

    pub fn geo(stage: &'static str, path: &Path, e: GeoError) -> Self {
        let kind = match e {
            GeoError::InvalidParameter(_) => Failure::Config,
            GeoError::NoConvergence(_) => Failure::Numerical,
            _ => Failure::Data,
        };
        Self::new(stage, kind, format!("{}: {e}", path.display()))
    }

    pub fn feature(stage: &'static str, path: &Path, e: FeatureError) -> Self {
        Self::new(stage, Failure::Data, format!("{}: {e}", path.display()))
    }

    pub fn matching(stage: &'static str, e: MatchError) -> Self {
        Self::new(stage, match_failure(&e), e.to_string())
    }

    pub fn synth(e: SynthError) -> Self {
        let kind = match &e {
            SynthError::InvalidConfig(_) => Failure::Config,
            SynthError::Io(io) => io_failure(io),
            _ => Failure::Numerical,
        };
        Self::new("synth", kind, e.to_string())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} failed: {}", self.stage, self.message)
    }
}

fn io_failure(e: &io::Error) -> Failure {
    match e.kind() {
        io::ErrorKind::NotFound | io::ErrorKind::PermissionDenied | io::ErrorKind::IsADirectory => Failure::Config,
        _ => Failure::Data,
    }
}

fn match_failure(e: &MatchError) -> Failure {
    match e {
        MatchError::InvalidRatio(_) | MatchError::RatiosNotIncreasing => Failure::Config,
        MatchError::DimensionMismatch { .. } | MatchError::TooFewDescriptors(_) => Failure::Data,
    }
}

fn georef_failure(e: &GeorefError) -> Failure {
    match e {
        GeorefError::MissingPos(_) | GeorefError::NotProjected(_) => Failure::Data,
        _ => Failure::Numerical,
    }
}
