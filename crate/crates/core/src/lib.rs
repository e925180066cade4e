//! Training-free boosting of few-shot segmentation masks.
//!
//! A coarse predicted mask is turned into point/box prompts, a promptable
//! segmenter proposes a refined mask, and the refined mask is kept only when
//! it agrees strongly enough (IoU above a threshold) with the original.
//! The crate also carries the evaluation harness: fold splits, seeded episode
//! sampling, mIoU / FB-mIoU and the situation decomposition.
//!
//! Batch stages run on rayon when the default `parallel` feature is enabled
//! and fall back to plain iteration otherwise.

pub mod episodes;
pub mod mask;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod prompt;
pub mod prs;
pub mod segmenter;

pub use mask::{iou, raw_moments, BinaryMask, MaskError, Overlap, RawMoments};
pub use prompt::{bounding_box, centroid_point, generate_prompts, PromptMode, PromptSet};
pub use prs::{select, select_batch, Selection, SelectionSource, Threshold};
