//! JSON bodies of the segmentation service protocol.
//!
//! ```text
//! POST /segment
//!   {"episode_id": "...", "image": {"uri": "..."} | {"png_b64": "..."},
//!    "prompts": {"mode": "point"|"box"|"mixed",
//!                "point": {"x": .., "y": .., "label": 1} | null,
//!                "box": {"x1": .., "y1": .., "x2": .., "y2": ..} | null}}
//!   -> {"mask_png_b64": "...", "score": number | null, "width": int, "height": int}
//! GET /health -> {"status": "ok", "model_id": "..."}
//! ```
//!
//! Box corners are inclusive pixel coordinates. A conforming service returns
//! its single highest-scoring mask at the original query resolution.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{ImageSource, SegmentError, SegmentRequest, SegmentResponse};
use crate::mask::{load_mask, save_mask, BinaryMask, MaskFormat};
use crate::prompt::PromptSet;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WireImage {
    Uri { uri: String },
    Png { png_b64: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub episode_id: String,
    pub image: WireImage,
    pub prompts: PromptSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub mask_png_b64: String,
    pub score: Option<f64>,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub model_id: String,
}

impl WireRequest {
    pub fn from_request(request: &SegmentRequest) -> Result<Self, SegmentError> {
        let image = match &request.image {
            Some(ImageSource::Uri(uri)) => WireImage::Uri { uri: uri.clone() },
            Some(ImageSource::PngBytes(bytes)) => WireImage::Png {
                png_b64: B64.encode(bytes),
            },
            None => {
                return Err(SegmentError::InvalidRequest(
                    "request carries neither an image uri nor image bytes".into(),
                ))
            }
        };
        Ok(Self {
            episode_id: request.episode_id.clone(),
            image,
            prompts: request.prompts,
        })
    }
}

impl WireResponse {
    pub fn from_mask(mask: &BinaryMask, score: Option<f64>) -> Self {
        Self {
            mask_png_b64: B64.encode(save_mask(mask, MaskFormat::Png)),
            score,
            width: mask.width(),
            height: mask.height(),
        }
    }

    /// Decodes the embedded mask and checks it against the advertised shape.
    pub fn into_response(self, backend_id: &str) -> Result<SegmentResponse, SegmentError> {
        let png = B64
            .decode(self.mask_png_b64.as_bytes())
            .map_err(|e| SegmentError::Protocol(format!("mask_png_b64: {e}")))?;
        let mask = load_mask(&png, MaskFormat::Png)
            .map_err(|e| SegmentError::Protocol(format!("mask_png_b64: {e}")))?;
        if mask.dims() != (self.width, self.height) {
            return Err(SegmentError::DimensionMismatch {
                expected: (self.width, self.height),
                actual: mask.dims(),
            });
        }
        Ok(SegmentResponse {
            mask,
            score: self.score,
            backend_id: backend_id.to_string(),
        })
    }
}

pub fn encode_request(request: &SegmentRequest) -> Result<String, SegmentError> {
    let wire = WireRequest::from_request(request)?;
    Ok(serde_json::to_string(&wire).expect("wire request serializes"))
}

pub fn decode_response(body: &str, backend_id: &str) -> Result<SegmentResponse, SegmentError> {
    let wire: WireResponse = serde_json::from_str(body)
        .map_err(|e| SegmentError::Protocol(format!("response body: {e}")))?;
    wire.into_response(backend_id)
}
