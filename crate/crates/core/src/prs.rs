//! Prediction results selection.
//!
//! For each episode the boosted mask replaces the original prediction only
//! when their IoU is strictly greater than the threshold `T`. At `T = 1`
//! nothing can be replaced; at `T = 0` every boosted mask that overlaps its
//! original at all is taken (zero-overlap pairs keep the original).
//!
//! Episodes without a boosted mask keep the original and are tagged with why:
//! an empty original yields no prompt, and a backend failure is absorbed
//! rather than aborting the batch.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::{BinaryMask, MaskError};
use crate::par::{self, Execution};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PrsError {
    #[error("threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
    #[error("episode {episode_id}: {source}")]
    Mask {
        episode_id: String,
        #[source]
        source: MaskError,
    },
    #[error("input lengths differ: {ids} ids, {fss} FSS masks, {sam} SAM candidates")]
    LengthMismatch { ids: usize, fss: usize, sam: usize },
}

/// Selection threshold in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Threshold(f64);

impl Threshold {
    pub const DEFAULT: Threshold = Threshold(0.75);

    pub fn new(value: f64) -> Result<Self, PrsError> {
        if (0.0..=1.0).contains(&value) {
            Ok(Self(value))
        } else {
            Err(PrsError::InvalidThreshold(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for Threshold {
    fn default() -> Self {
        Self::DEFAULT
    }
}

impl TryFrom<f64> for Threshold {
    type Error = PrsError;

    fn try_from(value: f64) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<Threshold> for f64 {
    fn from(t: Threshold) -> f64 {
        t.0
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SelectionSource {
    #[serde(rename = "FSS")]
    Fss,
    #[serde(rename = "SAM")]
    Sam,
    #[serde(rename = "FSS_fallback_empty")]
    FssFallbackEmpty,
    #[serde(rename = "FSS_fallback_error")]
    FssFallbackError,
}

impl SelectionSource {
    pub fn is_sam(self) -> bool {
        self == SelectionSource::Sam
    }
}

/// What the segmenter stage produced for one episode.
#[derive(Debug, Clone, PartialEq)]
pub enum SamCandidate {
    Mask(BinaryMask),
    /// The original mask had no foreground, so no prompt was sent.
    SkippedEmpty,
    /// The backend failed for this episode.
    Failed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub episode_id: String,
    pub chosen: BinaryMask,
    pub source: SelectionSource,
    pub iou_fss_sam: Option<f64>,
    pub threshold: Threshold,
}

/// One line of the selection audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub episode_id: String,
    pub source: SelectionSource,
    pub iou_fss_sam: Option<f64>,
    pub threshold: Threshold,
}

impl Selection {
    pub fn record(&self) -> SelectionRecord {
        SelectionRecord {
            episode_id: self.episode_id.clone(),
            source: self.source,
            iou_fss_sam: self.iou_fss_sam,
            threshold: self.threshold,
        }
    }
}

pub fn select(
    episode_id: &str,
    fss: &BinaryMask,
    sam: &BinaryMask,
    threshold: Threshold,
) -> Result<Selection, PrsError> {
    let iou = fss
        .overlap(sam)
        .map_err(|source| PrsError::Mask {
            episode_id: episode_id.to_string(),
            source,
        })?
        .ratio();
    let (chosen, source) = if iou > threshold.value() {
        (sam.clone(), SelectionSource::Sam)
    } else {
        (fss.clone(), SelectionSource::Fss)
    };
    Ok(Selection {
        episode_id: episode_id.to_string(),
        chosen,
        source,
        iou_fss_sam: Some(iou),
        threshold,
    })
}

pub fn select_batch(
    episode_ids: &[String],
    d_fss: &[BinaryMask],
    d_sam: &[SamCandidate],
    threshold: Threshold,
) -> Result<Vec<Selection>, PrsError> {
    select_batch_with(Execution::default(), episode_ids, d_fss, d_sam, threshold)
}

pub fn select_batch_with(
    exec: Execution,
    episode_ids: &[String],
    d_fss: &[BinaryMask],
    d_sam: &[SamCandidate],
    threshold: Threshold,
) -> Result<Vec<Selection>, PrsError> {
    if episode_ids.len() != d_fss.len() || d_fss.len() != d_sam.len() {
        return Err(PrsError::LengthMismatch {
            ids: episode_ids.len(),
            fss: d_fss.len(),
            sam: d_sam.len(),
        });
    }
    let indices: Vec<usize> = (0..d_fss.len()).collect();
    par::map(exec, &indices, |&i| {
        let (id, fss) = (&episode_ids[i], &d_fss[i]);
        let fallback = |source| Selection {
            episode_id: id.clone(),
            chosen: fss.clone(),
            source,
            iou_fss_sam: None,
            threshold,
        };
        match &d_sam[i] {
            SamCandidate::Mask(sam) => select(id, fss, sam, threshold),
            SamCandidate::SkippedEmpty => Ok(fallback(SelectionSource::FssFallbackEmpty)),
            SamCandidate::Failed => Ok(fallback(SelectionSource::FssFallbackError)),
        }
    })
    .into_iter()
    .collect()
}
