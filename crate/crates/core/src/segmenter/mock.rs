use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use super::{SegmentError, SegmentRequest, SegmentResponse, Segmenter};
use crate::mask::BinaryMask;

/// Deterministic stand-ins for a real segmenter. They ignore the prompts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MockKind {
    /// Echoes the episode's FSS mask.
    Identity,
    /// Returns the episode's ground-truth mask.
    GroundTruth,
    /// Returns the FSS mask dilated by a square of the given radius.
    Dilate(u32),
}

impl MockKind {
    /// Whether the fixtures this mock reads are ground-truth masks rather
    /// than FSS predictions.
    pub fn reads_ground_truth(self) -> bool {
        matches!(self, MockKind::GroundTruth)
    }
}

impl fmt::Display for MockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MockKind::Identity => f.write_str("identity"),
            MockKind::GroundTruth => f.write_str("gt"),
            MockKind::Dilate(r) => write!(f, "dilate:{r}"),
        }
    }
}

impl FromStr for MockKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "identity" => Ok(MockKind::Identity),
            "gt" | "ground-truth" => Ok(MockKind::GroundTruth),
            _ => match s.strip_prefix("dilate:") {
                Some(r) => r
                    .parse()
                    .map(MockKind::Dilate)
                    .map_err(|_| format!("bad dilation radius {r:?}")),
                None => Err(format!("unknown mock kind {s:?} (identity, gt, dilate:<r>)")),
            },
        }
    }
}

pub struct MockSegmenter {
    kind: MockKind,
    fixtures: HashMap<String, BinaryMask>,
    id: String,
}

impl MockSegmenter {
    /// `fixtures` maps episode id to the FSS mask, or to the ground truth
    /// for [`MockKind::GroundTruth`].
    pub fn new(kind: MockKind, fixtures: HashMap<String, BinaryMask>) -> Self {
        Self {
            kind,
            fixtures,
            id: format!("mock:{kind}"),
        }
    }

    pub fn kind(&self) -> MockKind {
        self.kind
    }
}

impl Segmenter for MockSegmenter {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn segment(&self, request: &SegmentRequest) -> Result<SegmentResponse, SegmentError> {
        let source = self
            .fixtures
            .get(&request.episode_id)
            .ok_or_else(|| SegmentError::MissingPrecomputed(request.episode_id.clone()))?;
        let mask = match self.kind {
            MockKind::Identity | MockKind::GroundTruth => source.clone(),
            MockKind::Dilate(r) => source.dilate(r),
        };
        Ok(SegmentResponse {
            mask,
            score: None,
            backend_id: self.id.clone(),
        })
    }
}
