//! Point, box and mixed prompts derived from a coarse predicted mask.
//!
//! The point is the foreground centroid `(m10 / m00, m01 / m00)` kept at
//! sub-pixel precision; the box is the tight inclusive per-axis extent of the
//! foreground. Both are computed over the whole foreground, so a mask with
//! several disconnected blobs yields one prompt spanning all of them, and a
//! ring-shaped foreground can put the centroid on a background pixel.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::BinaryMask;

/// Label carried by every point prompt: foreground.
pub const FOREGROUND_LABEL: u8 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("mask has no foreground pixels; no prompt can be derived")]
    EmptyForeground,
    #[error("unknown prompt mode {0:?} (expected point, box or mixed)")]
    UnknownMode(String),
    #[error("prompt set does not match its mode: {0}")]
    Inconsistent(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptMode {
    Point,
    Box,
    Mixed,
}

impl PromptMode {
    pub const ALL: [PromptMode; 3] = [PromptMode::Point, PromptMode::Box, PromptMode::Mixed];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptMode::Point => "point",
            PromptMode::Box => "box",
            PromptMode::Mixed => "mixed",
        }
    }
}

impl fmt::Display for PromptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptMode {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "point" => Ok(PromptMode::Point),
            "box" => Ok(PromptMode::Box),
            "mixed" => Ok(PromptMode::Mixed),
            other => Err(PromptError::UnknownMode(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointPrompt {
    pub x: f64,
    pub y: f64,
    pub label: u8,
}

/// Inclusive pixel coordinates of an axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoxPrompt {
    pub x1: u32,
    pub y1: u32,
    pub x2: u32,
    pub y2: u32,
}

impl BoxPrompt {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.x1 as f64 <= x && x <= self.x2 as f64 && self.y1 as f64 <= y && y <= self.y2 as f64
    }
}

/// The prompts sent to a segmenter for one query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "UncheckedPromptSet")]
pub struct PromptSet {
    mode: PromptMode,
    point: Option<PointPrompt>,
    #[serde(rename = "box")]
    bbox: Option<BoxPrompt>,
}

#[derive(Deserialize)]
struct UncheckedPromptSet {
    mode: PromptMode,
    point: Option<PointPrompt>,
    #[serde(rename = "box")]
    bbox: Option<BoxPrompt>,
}

impl TryFrom<UncheckedPromptSet> for PromptSet {
    type Error = PromptError;

    fn try_from(raw: UncheckedPromptSet) -> Result<Self, Self::Error> {
        match (raw.mode, raw.point, raw.bbox) {
            (PromptMode::Point, Some(p), None) => Ok(Self::from_point(p)),
            (PromptMode::Box, None, Some(b)) => Ok(Self::from_box(b)),
            (PromptMode::Mixed, Some(p), Some(b)) => Ok(Self::mixed(p, b)),
            (PromptMode::Point, ..) => Err(PromptError::Inconsistent("point mode needs a point and no box")),
            (PromptMode::Box, ..) => Err(PromptError::Inconsistent("box mode needs a box and no point")),
            (PromptMode::Mixed, ..) => Err(PromptError::Inconsistent("mixed mode needs both a point and a box")),
        }
    }
}

impl PromptSet {
    pub fn from_point(point: PointPrompt) -> Self {
        Self {
            mode: PromptMode::Point,
            point: Some(point),
            bbox: None,
        }
    }

    pub fn from_box(bbox: BoxPrompt) -> Self {
        Self {
            mode: PromptMode::Box,
            point: None,
            bbox: Some(bbox),
        }
    }

    pub fn mixed(point: PointPrompt, bbox: BoxPrompt) -> Self {
        Self {
            mode: PromptMode::Mixed,
            point: Some(point),
            bbox: Some(bbox),
        }
    }

    pub fn mode(&self) -> PromptMode {
        self.mode
    }

    pub fn point(&self) -> Option<&PointPrompt> {
        self.point.as_ref()
    }

    pub fn bbox(&self) -> Option<&BoxPrompt> {
        self.bbox.as_ref()
    }
}

pub fn centroid_point(mask: &BinaryMask) -> Result<PointPrompt, PromptError> {
    let m = mask.raw_moments();
    if m.m00 == 0 {
        return Err(PromptError::EmptyForeground);
    }
    Ok(PointPrompt {
        x: m.m10 as f64 / m.m00 as f64,
        y: m.m01 as f64 / m.m00 as f64,
        label: FOREGROUND_LABEL,
    })
}

pub fn bounding_box(mask: &BinaryMask) -> Result<BoxPrompt, PromptError> {
    let e = mask.extent().ok_or(PromptError::EmptyForeground)?;
    Ok(BoxPrompt {
        x1: e.x_min,
        y1: e.y_min,
        x2: e.x_max,
        y2: e.y_max,
    })
}

pub fn generate_prompts(mask: &BinaryMask, mode: PromptMode) -> Result<PromptSet, PromptError> {
    Ok(match mode {
        PromptMode::Point => PromptSet::from_point(centroid_point(mask)?),
        PromptMode::Box => PromptSet::from_box(bounding_box(mask)?),
        PromptMode::Mixed => PromptSet::mixed(centroid_point(mask)?, bounding_box(mask)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn px<const N: usize>(w: u32, h: u32, pts: [(u32, u32); N]) -> BinaryMask {
        BinaryMask::from_pixels(w, h, pts).unwrap()
    }

    #[test]
    fn centroid_examples() {
        let p = centroid_point(&px(8, 8, [(3, 5)])).unwrap();
        assert_eq!((p.x, p.y, p.label), (3.0, 5.0, 1));
        let p = centroid_point(&BinaryMask::full(4, 4).unwrap()).unwrap();
        assert_eq!((p.x, p.y), (1.5, 1.5));
        let p = centroid_point(&px(4, 4, [(0, 0), (1, 0), (0, 1)])).unwrap();
        assert_eq!((p.x, p.y), (1.0 / 3.0, 1.0 / 3.0));
    }

    #[test]
    fn box_examples() {
        assert_eq!(
            bounding_box(&px(8, 8, [(3, 5)])).unwrap(),
            BoxPrompt { x1: 3, y1: 5, x2: 3, y2: 5 }
        );
        assert_eq!(
            bounding_box(&px(8, 8, [(1, 2), (4, 7)])).unwrap(),
            BoxPrompt { x1: 1, y1: 2, x2: 4, y2: 7 }
        );
        assert_eq!(
            bounding_box(&BinaryMask::full(4, 3).unwrap()).unwrap(),
            BoxPrompt { x1: 0, y1: 0, x2: 3, y2: 2 }
        );
    }

    #[test]
    fn empty_foreground_errors() {
        let empty = BinaryMask::new(4, 4).unwrap();
        assert_eq!(centroid_point(&empty), Err(PromptError::EmptyForeground));
        assert_eq!(bounding_box(&empty), Err(PromptError::EmptyForeground));
        for mode in PromptMode::ALL {
            assert_eq!(generate_prompts(&empty, mode), Err(PromptError::EmptyForeground));
        }
    }

    #[test]
    fn modes_populate_the_right_fields() {
        let m = px(10, 10, [(2, 3), (4, 4)]);
        let b = generate_prompts(&m, PromptMode::Box).unwrap();
        assert!(b.point().is_none() && b.bbox().is_some());
        let p = generate_prompts(&m, PromptMode::Point).unwrap();
        assert!(p.point().is_some() && p.bbox().is_none());

        let mixed = generate_prompts(&px(8, 8, [(3, 5)]), PromptMode::Mixed).unwrap();
        assert_eq!(mixed.point().map(|p| (p.x, p.y)), Some((3.0, 5.0)));
        assert_eq!(mixed.bbox(), Some(&BoxPrompt { x1: 3, y1: 5, x2: 3, y2: 5 }));
    }

    #[test]
    fn disconnected_components_share_one_prompt() {
        let m = px(10, 10, [(0, 0), (9, 9)]);
        assert_eq!(m.raw_moments().m10, 9);
        let s = generate_prompts(&m, PromptMode::Mixed).unwrap();
        assert_eq!(s.point().map(|p| (p.x, p.y)), Some((4.5, 4.5)));
        assert_eq!(s.bbox(), Some(&BoxPrompt { x1: 0, y1: 0, x2: 9, y2: 9 }));
    }

    #[test]
    fn ring_centroid_may_be_background() {
        let ring = BinaryMask::from_fn(5, 5, |x, y| x == 0 || y == 0 || x == 4 || y == 4).unwrap();
        let p = centroid_point(&ring).unwrap();
        assert_eq!((p.x, p.y), (2.0, 2.0));
        assert!(!ring.get(2, 2));
    }

    #[test]
    fn wire_json_shape() {
        let s = PromptSet::from_box(BoxPrompt { x1: 1, y1: 2, x2: 3, y2: 4 });
        assert_eq!(
            serde_json::to_string(&s).unwrap(),
            r#"{"mode":"box","point":null,"box":{"x1":1,"y1":2,"x2":3,"y2":4}}"#
        );
        let bad = r#"{"mode":"mixed","point":null,"box":{"x1":1,"y1":2,"x2":3,"y2":4}}"#;
        assert!(serde_json::from_str::<PromptSet>(bad).is_err());
    }

    #[test]
    fn mode_parse() {
        assert_eq!("mixed".parse::<PromptMode>().unwrap(), PromptMode::Mixed);
        assert!("boxes".parse::<PromptMode>().is_err());
    }
}
