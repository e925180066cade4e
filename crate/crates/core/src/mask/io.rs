use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::codecs::png::PngEncoder;
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageFormat};
use thiserror::Error;

use super::BinaryMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MaskFormat {
    /// 8-bit single-channel PNG.
    Png,
    /// Netpbm graymap, binary (P5) or plain (P2).
    Pgm,
}

impl MaskFormat {
    pub fn from_path(path: &Path) -> Result<Self, MaskIoError> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        match ext.as_deref() {
            Some("png") => Ok(Self::Png),
            Some("pgm") => Ok(Self::Pgm),
            _ => Err(MaskIoError::UnsupportedFormat(format!(
                "cannot infer mask format from {}",
                path.display()
            ))),
        }
    }
}

#[derive(Debug, Error)]
pub enum MaskIoError {
    #[error("failed to decode mask: {0}")]
    Decode(String),
    #[error("unsupported mask format: {0}")]
    UnsupportedFormat(String),
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Decodes a mask; 0 is background and any nonzero sample is foreground.
pub fn load_mask(bytes: &[u8], format: MaskFormat) -> Result<BinaryMask, MaskIoError> {
    let image_format = match format {
        MaskFormat::Png => ImageFormat::Png,
        MaskFormat::Pgm => {
            if !(bytes.starts_with(b"P5") || bytes.starts_with(b"P2")) {
                return Err(MaskIoError::UnsupportedFormat(
                    "netpbm stream is not a graymap (P2/P5)".into(),
                ));
            }
            ImageFormat::Pnm
        }
    };
    let decoded = image::load_from_memory_with_format(bytes, image_format)
        .map_err(|e| MaskIoError::Decode(e.to_string()))?;
    let DynamicImage::ImageLuma8(gray) = decoded else {
        return Err(MaskIoError::UnsupportedFormat(format!(
            "expected 8-bit single-channel raster, got {:?}",
            decoded.color()
        )));
    };
    let (width, height) = gray.dimensions();
    BinaryMask::from_gray8(width, height, gray.as_raw())
        .map_err(|e| MaskIoError::Decode(e.to_string()))
}

/// Encodes background as 0 and foreground as 255.
pub fn save_mask(mask: &BinaryMask, format: MaskFormat) -> Vec<u8> {
    let samples = mask.to_gray8();
    let mut out = Cursor::new(Vec::new());
    let result = match format {
        MaskFormat::Png => PngEncoder::new(&mut out).write_image(
            &samples,
            mask.width(),
            mask.height(),
            ExtendedColorType::L8,
        ),
        MaskFormat::Pgm => PnmEncoder::new(&mut out)
            .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
            .write_image(&samples, mask.width(), mask.height(), ExtendedColorType::L8),
    };
    // In-memory encoding of a validated L8 buffer cannot fail.
    result.expect("encoding an L8 mask into memory");
    out.into_inner()
}

pub fn read_mask_file(path: &Path) -> Result<BinaryMask, MaskIoError> {
    let format = MaskFormat::from_path(path)?;
    let bytes = std::fs::read(path).map_err(|source| MaskIoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    load_mask(&bytes, format)
}

pub fn write_mask_file(path: &Path, mask: &BinaryMask) -> Result<(), MaskIoError> {
    let format = MaskFormat::from_path(path)?;
    std::fs::write(path, save_mask(mask, format)).map_err(|source| MaskIoError::Io {
        path: path.to_path_buf(),
        source,
    })
}
