//! Bit-packed binary masks with exact set algebra and raw image moments.
//!
//! Pixels are addressed as `(x, y)` with the origin at the top-left corner,
//! `x` growing rightward and `y` downward. Each row is packed into
//! `ceil(width / 64)` words; bits past `width` in the last word of a row are
//! always zero, so whole-word popcounts never see padding.

mod io;

pub use io::{load_mask, read_mask_file, save_mask, write_mask_file, MaskFormat, MaskIoError};

use std::fmt;

use thiserror::Error;

const WORD_BITS: usize = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MaskError {
    #[error("mask dimensions must be at least 1x1, got {width}x{height}")]
    ZeroSize { width: u32, height: u32 },
    #[error("expected {expected} pixels for the declared shape, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("pixel ({x}, {y}) lies outside a {width}x{height} mask")]
    OutOfBounds { x: u32, y: u32, width: u32, height: u32 },
    #[error("dimension mismatch: {}x{} vs {}x{}", .left.0, .left.1, .right.0, .right.1)]
    DimensionMismatch { left: (u32, u32), right: (u32, u32) },
}

/// A fixed-size foreground/background raster.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    stride: usize,
    words: Vec<u64>,
}

/// Zeroth and first order raw moments of the foreground, accumulated exactly.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct RawMoments {
    /// Foreground pixel count.
    pub m00: u64,
    /// Sum of `x` over foreground pixels.
    pub m10: u64,
    /// Sum of `y` over foreground pixels.
    pub m01: u64,
}

/// Intersection and union pixel counts of two same-shaped masks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Overlap {
    pub intersection: u64,
    pub union: u64,
}

impl Overlap {
    /// `intersection / union`, or 1.0 when both sets are empty.
    pub fn ratio(&self) -> f64 {
        if self.union == 0 {
            1.0
        } else {
            self.intersection as f64 / self.union as f64
        }
    }
}

/// Inclusive per-axis extremes of the foreground.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Extent {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl BinaryMask {
    /// All-background mask.
    pub fn new(width: u32, height: u32) -> Result<Self, MaskError> {
        if width == 0 || height == 0 {
            return Err(MaskError::ZeroSize { width, height });
        }
        let stride = (width as usize).div_ceil(WORD_BITS);
        Ok(Self {
            width,
            height,
            stride,
            words: vec![0; stride * height as usize],
        })
    }

    /// All-foreground mask.
    pub fn full(width: u32, height: u32) -> Result<Self, MaskError> {
        let mut mask = Self::new(width, height)?;
        mask.words.fill(u64::MAX);
        mask.clear_padding();
        Ok(mask)
    }

    pub fn from_fn<F>(width: u32, height: u32, mut f: F) -> Result<Self, MaskError>
    where
        F: FnMut(u32, u32) -> bool,
    {
        let mut mask = Self::new(width, height)?;
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    mask.insert(x, y);
                }
            }
        }
        Ok(mask)
    }

    /// Builds a mask from a row-major slice, one entry per pixel.
    pub fn from_bools(width: u32, height: u32, bits: &[bool]) -> Result<Self, MaskError> {
        let expected = width as usize * height as usize;
        if bits.len() != expected {
            return Err(MaskError::LengthMismatch {
                expected,
                actual: bits.len(),
            });
        }
        Self::from_fn(width, height, |x, y| {
            bits[y as usize * width as usize + x as usize]
        })
    }

    /// Builds a mask from raw 8-bit samples where any nonzero value is foreground.
    pub fn from_gray8(width: u32, height: u32, samples: &[u8]) -> Result<Self, MaskError> {
        let expected = width as usize * height as usize;
        if samples.len() != expected {
            return Err(MaskError::LengthMismatch {
                expected,
                actual: samples.len(),
            });
        }
        Self::from_fn(width, height, |x, y| {
            samples[y as usize * width as usize + x as usize] != 0
        })
    }

    pub fn from_pixels<I>(width: u32, height: u32, pixels: I) -> Result<Self, MaskError>
    where
        I: IntoIterator<Item = (u32, u32)>,
    {
        let mut mask = Self::new(width, height)?;
        for (x, y) in pixels {
            if x >= width || y >= height {
                return Err(MaskError::OutOfBounds {
                    x,
                    y,
                    width,
                    height,
                });
            }
            mask.insert(x, y);
        }
        Ok(mask)
    }

    #[inline]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[inline]
    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    /// Total number of pixels.
    #[inline]
    pub fn area(&self) -> u64 {
        self.width as u64 * self.height as u64
    }

    /// Foreground value at `(x, y)`.
    ///
    /// # Panics
    /// Panics if the coordinate is outside the mask.
    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        assert!(
            x < self.width && y < self.height,
            "pixel ({x}, {y}) outside {}x{} mask",
            self.width,
            self.height
        );
        let (word, bit) = self.locate(x, y);
        self.words[word] >> bit & 1 == 1
    }

    pub fn foreground_count(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }

    pub fn has_foreground(&self) -> bool {
        self.words.iter().any(|&w| w != 0)
    }

    /// Row-major expansion, one `bool` per pixel.
    pub fn to_bools(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.area() as usize);
        for y in 0..self.height {
            for x in 0..self.width {
                out.push(self.get(x, y));
            }
        }
        out
    }

    /// Row-major 8-bit samples, background 0 and foreground 255.
    pub fn to_gray8(&self) -> Vec<u8> {
        self.to_bools()
            .into_iter()
            .map(|b| if b { 255 } else { 0 })
            .collect()
    }

    /// Foreground coordinates in row-major order.
    pub fn foreground(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.words
            .chunks_exact(self.stride)
            .enumerate()
            .flat_map(|(y, row)| {
                row.iter().enumerate().flat_map(move |(k, &word)| {
                    SetBits(word).map(move |bit| ((k * WORD_BITS + bit) as u32, y as u32))
                })
            })
    }

    pub fn complement(&self) -> Self {
        let mut out = self.clone();
        out.words.iter_mut().for_each(|w| *w = !*w);
        out.clear_padding();
        out
    }

    pub fn intersection(&self, other: &Self) -> Result<Self, MaskError> {
        self.zip_words(other, |a, b| a & b)
    }

    pub fn union(&self, other: &Self) -> Result<Self, MaskError> {
        self.zip_words(other, |a, b| a | b)
    }

    /// Intersection and union counts in one pass over the packed words.
    pub fn overlap(&self, other: &Self) -> Result<Overlap, MaskError> {
        self.check_same_shape(other)?;
        let mut overlap = Overlap::default();
        for (&a, &b) in self.words.iter().zip(&other.words) {
            overlap.intersection += (a & b).count_ones() as u64;
            overlap.union += (a | b).count_ones() as u64;
        }
        Ok(overlap)
    }

    pub fn raw_moments(&self) -> RawMoments {
        let mut moments = RawMoments::default();
        for (y, row) in self.words.chunks_exact(self.stride).enumerate() {
            let mut row_count = 0u64;
            for (k, &word) in row.iter().enumerate() {
                row_count += word.count_ones() as u64;
                let base = (k * WORD_BITS) as u64;
                moments.m10 += SetBits(word).map(|bit| base + bit as u64).sum::<u64>();
            }
            moments.m00 += row_count;
            moments.m01 += y as u64 * row_count;
        }
        moments
    }

    /// Tight inclusive extent of the foreground, `None` when the mask is empty.
    pub fn extent(&self) -> Option<Extent> {
        let mut extent: Option<Extent> = None;
        for (y, row) in self.words.chunks_exact(self.stride).enumerate() {
            let Some(first_k) = row.iter().position(|&w| w != 0) else {
                continue;
            };
            let last_k = row.iter().rposition(|&w| w != 0).unwrap_or(first_k);
            let row_min = (first_k * WORD_BITS) as u32 + row[first_k].trailing_zeros();
            let row_max =
                (last_k * WORD_BITS) as u32 + (WORD_BITS as u32 - 1 - row[last_k].leading_zeros());
            let y = y as u32;
            extent = Some(match extent {
                None => Extent {
                    x_min: row_min,
                    y_min: y,
                    x_max: row_max,
                    y_max: y,
                },
                Some(e) => Extent {
                    x_min: e.x_min.min(row_min),
                    y_min: e.y_min,
                    x_max: e.x_max.max(row_max),
                    y_max: y,
                },
            });
        }
        extent
    }

    /// Dilation by a `(2r+1) x (2r+1)` square structuring element.
    pub fn dilate(&self, radius: u32) -> Self {
        if radius == 0 {
            return self.clone();
        }
        let (w, h) = (self.width as i64, self.height as i64);
        let r = radius as i64;
        let src = self.to_bools();
        // Horizontal then vertical running-window passes.
        let mut horizontal = vec![false; src.len()];
        for y in 0..h {
            let row = &src[(y * w) as usize..((y + 1) * w) as usize];
            let mut prefix = vec![0u32; row.len() + 1];
            for (i, &b) in row.iter().enumerate() {
                prefix[i + 1] = prefix[i] + b as u32;
            }
            for x in 0..w {
                let lo = (x - r).max(0) as usize;
                let hi = (x + r + 1).min(w) as usize;
                horizontal[(y * w + x) as usize] = prefix[hi] > prefix[lo];
            }
        }
        let mut out = Self::new(self.width, self.height).expect("shape already validated");
        for x in 0..w {
            let mut prefix = vec![0u32; h as usize + 1];
            for y in 0..h {
                prefix[y as usize + 1] = prefix[y as usize] + horizontal[(y * w + x) as usize] as u32;
            }
            for y in 0..h {
                let lo = (y - r).max(0) as usize;
                let hi = (y + r + 1).min(h) as usize;
                if prefix[hi] > prefix[lo] {
                    out.insert(x as u32, y as u32);
                }
            }
        }
        out
    }

    pub(crate) fn check_same_shape(&self, other: &Self) -> Result<(), MaskError> {
        if self.dims() != other.dims() {
            return Err(MaskError::DimensionMismatch {
                left: self.dims(),
                right: other.dims(),
            });
        }
        Ok(())
    }

    fn zip_words(&self, other: &Self, op: impl Fn(u64, u64) -> u64) -> Result<Self, MaskError> {
        self.check_same_shape(other)?;
        let mut out = self.clone();
        for (a, &b) in out.words.iter_mut().zip(&other.words) {
            *a = op(*a, b);
        }
        Ok(out)
    }

    #[inline]
    fn locate(&self, x: u32, y: u32) -> (usize, usize) {
        let x = x as usize;
        (y as usize * self.stride + x / WORD_BITS, x % WORD_BITS)
    }

    #[inline]
    fn insert(&mut self, x: u32, y: u32) {
        let (word, bit) = self.locate(x, y);
        self.words[word] |= 1 << bit;
    }

    fn clear_padding(&mut self) {
        let tail = self.width as usize % WORD_BITS;
        if tail == 0 {
            return;
        }
        let keep = (1u64 << tail) - 1;
        for row in self.words.chunks_exact_mut(self.stride) {
            if let Some(last) = row.last_mut() {
                *last &= keep;
            }
        }
    }
}

impl fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BinaryMask")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("foreground", &self.foreground_count())
            .finish()
    }
}

/// Iterates the indices of set bits in a word, lowest first.
struct SetBits(u64);

impl Iterator for SetBits {
    type Item = usize;

    #[inline]
    fn next(&mut self) -> Option<usize> {
        if self.0 == 0 {
            return None;
        }
        let bit = self.0.trailing_zeros() as usize;
        self.0 &= self.0 - 1;
        Some(bit)
    }
}

pub fn raw_moments(mask: &BinaryMask) -> RawMoments {
    mask.raw_moments()
}

/// `|a ∩ b| / |a ∪ b|`, exact integer counts divided once.
///
/// Two all-background masks are identical sets and score 1.0.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64, MaskError> {
    Ok(a.overlap(b)?.ratio())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_size_rejected() {
        assert_eq!(
            BinaryMask::new(0, 3).unwrap_err(),
            MaskError::ZeroSize { width: 0, height: 3 }
        );
    }

    #[test]
    fn moments_of_empty_mask_are_zero() {
        let m = BinaryMask::new(4, 4).unwrap();
        assert_eq!(raw_moments(&m), RawMoments { m00: 0, m10: 0, m01: 0 });
    }

    #[test]
    fn moments_of_single_pixel() {
        let m = BinaryMask::from_pixels(8, 8, [(3, 5)]).unwrap();
        assert_eq!(raw_moments(&m), RawMoments { m00: 1, m10: 3, m01: 5 });
    }

    #[test]
    fn moments_of_l_shape() {
        let m = BinaryMask::from_pixels(4, 4, [(0, 0), (1, 0), (0, 1)]).unwrap();
        assert_eq!(raw_moments(&m), RawMoments { m00: 3, m10: 1, m01: 1 });
    }

    #[test]
    fn moments_span_word_boundaries() {
        let m = BinaryMask::from_pixels(130, 3, [(63, 0), (64, 1), (129, 2)]).unwrap();
        assert_eq!(
            raw_moments(&m),
            RawMoments { m00: 3, m10: 63 + 64 + 129, m01: 3 }
        );
    }

    #[test]
    fn iou_identical_and_disjoint() {
        let a = BinaryMask::from_pixels(3, 3, [(0, 0), (2, 2)]).unwrap();
        let b = BinaryMask::from_pixels(3, 3, [(1, 1)]).unwrap();
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn iou_one_third() {
        let a = BinaryMask::from_pixels(2, 2, [(0, 0), (1, 0)]).unwrap();
        let b = BinaryMask::from_pixels(2, 2, [(1, 0), (1, 1)]).unwrap();
        assert_eq!(a.overlap(&b).unwrap(), Overlap { intersection: 1, union: 3 });
        assert_eq!(iou(&a, &b).unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn iou_of_two_empty_masks_is_one() {
        let a = BinaryMask::new(5, 2).unwrap();
        assert_eq!(iou(&a, &a.clone()).unwrap(), 1.0);
    }

    #[test]
    fn iou_shape_mismatch() {
        let a = BinaryMask::new(2, 3).unwrap();
        let b = BinaryMask::new(3, 2).unwrap();
        assert_eq!(
            iou(&a, &b).unwrap_err(),
            MaskError::DimensionMismatch { left: (2, 3), right: (3, 2) }
        );
    }

    #[test]
    fn complement_keeps_padding_clear() {
        let m = BinaryMask::new(70, 2).unwrap().complement();
        assert_eq!(m.foreground_count(), 140);
        assert_eq!(m, BinaryMask::full(70, 2).unwrap());
    }

    #[test]
    fn extent_matches_pixels() {
        let m = BinaryMask::from_pixels(100, 10, [(70, 2), (5, 8), (99, 4)]).unwrap();
        assert_eq!(
            m.extent(),
            Some(Extent { x_min: 5, y_min: 2, x_max: 99, y_max: 8 })
        );
        assert_eq!(BinaryMask::new(3, 3).unwrap().extent(), None);
    }

    #[test]
    fn dilate_grows_a_square() {
        let m = BinaryMask::from_pixels(7, 7, [(3, 3)]).unwrap();
        let d = m.dilate(1);
        assert_eq!(d.foreground_count(), 9);
        assert!(d.get(2, 2) && d.get(4, 4) && !d.get(1, 3));
        let corner = BinaryMask::from_pixels(4, 4, [(0, 0)]).unwrap().dilate(2);
        assert_eq!(corner.foreground_count(), 9);
    }

    #[test]
    fn foreground_iterates_row_major() {
        let px = [(65, 0), (1, 1), (2, 1)];
        let m = BinaryMask::from_pixels(80, 2, px).unwrap();
        assert_eq!(m.foreground().collect::<Vec<_>>(), px.to_vec());
    }

    #[test]
    fn from_bools_length_checked() {
        assert!(matches!(
            BinaryMask::from_bools(2, 2, &[true; 3]),
            Err(MaskError::LengthMismatch { expected: 4, actual: 3 })
        ));
    }
}
