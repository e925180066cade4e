//! The promptable-segmenter boundary.
//!
//! Every backend turns `(query image, prompts)` into exactly one binary mask.
//! Backends are interchangeable behind [`Segmenter`]: a remote HTTP service
//! speaking the JSON wire protocol in [`wire`], a directory of precomputed
//! masks, and deterministic mocks for tests.

mod mock;
mod precomputed;
mod remote;
pub mod wire;

pub use mock::{MockKind, MockSegmenter};
pub use precomputed::{PrecomputedManifest, PrecomputedSegmenter, MaskShape};
pub use remote::RemoteSegmenter;

use std::fmt;
use std::num::NonZeroUsize;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use crate::mask::BinaryMask;
use crate::par;
use crate::prompt::PromptSet;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SegmentError {
    #[error("segmenter backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("segmenter protocol error: {0}")]
    Protocol(String),
    #[error("no precomputed mask for episode {0:?}")]
    MissingPrecomputed(String),
    #[error("mask is {}x{} but {}x{} was expected", .actual.0, .actual.1, .expected.0, .expected.1)]
    DimensionMismatch {
        expected: (u32, u32),
        actual: (u32, u32),
    },
    #[error("invalid segment request: {0}")]
    InvalidRequest(String),
}

/// How the query image reaches the backend. Never decoded on this side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ImageSource {
    Uri(String),
    /// Encoded PNG bytes.
    PngBytes(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentRequest {
    pub episode_id: String,
    pub image: Option<ImageSource>,
    pub prompts: PromptSet,
    /// Query resolution `(width, height)` the returned mask must have.
    pub expected_dims: Option<(u32, u32)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentResponse {
    pub mask: BinaryMask,
    pub score: Option<f64>,
    pub backend_id: String,
}

pub trait Segmenter: Send + Sync {
    fn backend_id(&self) -> &str;

    /// Whether this backend needs the image itself (it ignores `episode_id`).
    fn needs_image(&self) -> bool {
        false
    }

    fn segment(&self, request: &SegmentRequest) -> Result<SegmentResponse, SegmentError>;
}

/// Runs one request and checks the response against the declared shape.
pub fn segment(
    request: &SegmentRequest,
    backend: &dyn Segmenter,
) -> Result<SegmentResponse, SegmentError> {
    if backend.needs_image() {
        if request.image.is_none() {
            return Err(SegmentError::InvalidRequest(
                "remote backends need an image uri or inline bytes".into(),
            ));
        }
    } else if request.episode_id.is_empty() {
        return Err(SegmentError::InvalidRequest("episode_id is required".into()));
    }
    let response = backend.segment(request)?;
    if let Some(expected) = request.expected_dims {
        if response.mask.dims() != expected {
            return Err(SegmentError::DimensionMismatch {
                expected,
                actual: response.mask.dims(),
            });
        }
    }
    Ok(response)
}

/// Segments every request, keeping at most `parallelism` calls in flight.
///
/// The output is index-aligned with `requests`; a failing item does not
/// affect the others.
pub fn segment_batch(
    requests: &[SegmentRequest],
    backend: &dyn Segmenter,
    parallelism: NonZeroUsize,
) -> Vec<Result<SegmentResponse, SegmentError>> {
    par::map_bounded(requests, parallelism.get(), |req| segment(req, backend))
}

/// Which backend a run talks to, as written on the command line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    Remote(String),
    Precomputed(PathBuf),
    Mock(MockKind),
}

impl FromStr for BackendSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| format!("backend {s:?} must look like remote:<url>, precomputed:<dir> or mock:<kind>"))?;
        match kind {
            "remote" if !rest.is_empty() => Ok(BackendSpec::Remote(rest.to_string())),
            "precomputed" if !rest.is_empty() => Ok(BackendSpec::Precomputed(PathBuf::from(rest))),
            "mock" => rest.parse().map(BackendSpec::Mock),
            _ => Err(format!("unrecognised backend {s:?}")),
        }
    }
}

impl fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendSpec::Remote(url) => write!(f, "remote:{url}"),
            BackendSpec::Precomputed(dir) => write!(f, "precomputed:{}", dir.display()),
            BackendSpec::Mock(kind) => write!(f, "mock:{kind}"),
        }
    }
}
