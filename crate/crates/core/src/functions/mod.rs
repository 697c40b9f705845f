//! Surgical function set: typed results, the registry, fixture-backed
//! implementations and remote-service clients.

mod fixture;
mod registry;
mod remote;
mod rle;
mod types;

pub use fixture::{
    content_id, fixture_detect, fixture_scene, fixture_segment, probe_scene, render_scene_ppm, FixtureBundle,
    SceneFixture, Vocabulary, FIXTURE_SCHEMA_VERSION, SCENE_HEIGHT, SCENE_WIDTH, VOCABULARY_FILE,
};
pub use registry::{
    default_registry, distractor_specs, registry_with_count, DistractorFunction, FixtureFunction, FunctionRequest,
    Registry, SurgicalFunction, MAX_FUNCTIONS, MIN_FUNCTIONS,
};
pub use remote::{RemoteFunction, RemoteFunctionConfig};
pub use rle::{rle_decode, rle_encode, Bitmap, SegmentationMask};
pub use types::{
    describe_triplets, BoundingBox, Detection, FunctionResult, FunctionSpec, OutputKind, SceneAnalysis, Triplet,
};

use serde::{Deserialize, Serialize};

/// Why a function invocation failed after dispatch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureCause {
    Transport,
    Status(u16),
    Schema,
    Validation,
    Timeout,
}

impl std::fmt::Display for FailureCause {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Transport => f.write_str("transport"),
            Self::Status(code) => write!(f, "status {code}"),
            Self::Schema => f.write_str("schema"),
            Self::Validation => f.write_str("validation"),
            Self::Timeout => f.write_str("timeout"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error, Serialize, Deserialize)]
#[serde(tag = "code", rename_all = "snake_case")]
pub enum FunctionError {
    #[error("unknown function {name:?}")]
    UnknownFunction { name: String },
    #[error("function {name:?} is already registered")]
    DuplicateName { name: String },
    #[error("parameter {param:?}: {reason}")]
    ParamValidation { param: String, reason: String },
    #[error("class {class:?} has no annotation")]
    ClassNotFound { class: String },
    #[error("no scene for image {image_ref:?}")]
    UnknownImage { image_ref: String },
    #[error("function failed ({cause}): {detail}")]
    Failed { cause: FailureCause, detail: String },
    #[error("invalid value: {detail}")]
    Validation { detail: String },
    #[error("fixture bundle {path}: {detail}")]
    Bundle { path: String, detail: String },
}

impl FunctionError {
    pub fn validation(detail: impl Into<String>) -> Self {
        Self::Validation { detail: detail.into() }
    }

    pub fn failed(cause: FailureCause, detail: impl Into<String>) -> Self {
        Self::Failed {
            cause,
            detail: detail.into(),
        }
    }

    /// Machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            Self::UnknownFunction { .. } => "unknown_function",
            Self::DuplicateName { .. } => "duplicate_name",
            Self::ParamValidation { .. } => "param_validation",
            Self::ClassNotFound { .. } => "class_not_found",
            Self::UnknownImage { .. } => "unknown_image",
            Self::Failed { .. } => "failed",
            Self::Validation { .. } => "validation",
            Self::Bundle { .. } => "bundle",
        }
    }
}
