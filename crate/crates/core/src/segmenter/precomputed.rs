use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{SegmentError, SegmentRequest, SegmentResponse, Segmenter};
use crate::mask::{read_mask_file, MaskIoError};
use crate::prompt::PromptMode;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskShape {
    pub width: u32,
    pub height: u32,
}

/// `manifest.json` of a precomputed directory: episode id to mask shape.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PrecomputedManifest(pub BTreeMap<String, MaskShape>);

/// Serves `<episode_id>.png` masks from a directory.
pub struct PrecomputedSegmenter {
    dir: PathBuf,
    manifest: PrecomputedManifest,
    id: String,
}

impl PrecomputedSegmenter {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, SegmentError> {
        let dir = dir.into();
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| {
            SegmentError::BackendUnavailable(format!("{}: {e}", path.display()))
        })?;
        let manifest = serde_json::from_str(&text)
            .map_err(|e| SegmentError::Protocol(format!("{}: {e}", path.display())))?;
        let id = format!("precomputed:{}", dir.display());
        Ok(Self { dir, manifest, id })
    }

    /// Opens `<root>/<mode>` when it holds its own manifest, else `root`.
    ///
    /// This lets one fixture tree carry separate mask sets per prompt mode.
    pub fn open_for_mode(root: &Path, mode: PromptMode) -> Result<Self, SegmentError> {
        let per_mode = root.join(mode.as_str());
        if per_mode.join(MANIFEST_FILE).is_file() {
            Self::open(per_mode)
        } else {
            Self::open(root)
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl Segmenter for PrecomputedSegmenter {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn segment(&self, request: &SegmentRequest) -> Result<SegmentResponse, SegmentError> {
        let missing = || SegmentError::MissingPrecomputed(request.episode_id.clone());
        let shape = self.manifest.0.get(&request.episode_id).ok_or_else(missing)?;
        let path = self.dir.join(format!("{}.png", request.episode_id));
        let mask = match read_mask_file(&path) {
            Ok(mask) => mask,
            Err(MaskIoError::Io { source, .. }) if source.kind() == std::io::ErrorKind::NotFound => {
                return Err(missing())
            }
            Err(e) => return Err(SegmentError::Protocol(e.to_string())),
        };
        let declared = (shape.width, shape.height);
        if mask.dims() != declared {
            return Err(SegmentError::DimensionMismatch {
                expected: declared,
                actual: mask.dims(),
            });
        }
        Ok(SegmentResponse {
            mask,
            score: None,
            backend_id: self.id.clone(),
        })
    }
}
