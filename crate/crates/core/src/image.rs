//! Luminance rasters, region masks and template validity maps.
//!
//! Every raster is a single-channel, row-major grid of `f64` samples. Masks
//! mark the usable (e.g. endoscopic) part of a frame; a [`ValidityMap`] is a
//! mask eroded by a square structuring element so that a template centred on
//! any valid position lies entirely inside the mask.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ImageError {
    #[error("raster dimensions must be at least 1x1, got {width}x{height}")]
    EmptyDimensions { width: usize, height: usize },
    #[error("sample buffer holds {actual} values, expected {expected}")]
    BufferSize { expected: usize, actual: usize },
    #[error("sample at index {index} is not finite")]
    NonFinite { index: usize },
    #[error("coordinate ({x}, {y}) outside the {width}x{height} domain")]
    OutOfDomain {
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
}

/// Single-channel luminance grid, nominally in `0..=255`.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    samples: Vec<f64>,
}

impl Raster {
    pub fn new(width: usize, height: usize, samples: Vec<f64>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyDimensions { width, height });
        }
        if samples.len() != width * height {
            return Err(ImageError::BufferSize {
                expected: width * height,
                actual: samples.len(),
            });
        }
        if let Some(index) = samples.iter().position(|v| !v.is_finite()) {
            return Err(ImageError::NonFinite { index });
        }
        Ok(Self {
            width,
            height,
            samples,
        })
    }

    /// Builds a raster by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self, ImageError> {
        let mut samples = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                samples.push(f(x, y));
            }
        }
        Self::new(width, height, samples)
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self, ImageError> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_u8(width: usize, height: usize, bytes: &[u8]) -> Result<Self, ImageError> {
        Self::new(width, height, bytes.iter().map(|&b| f64::from(b)).collect())
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    /// Sample at an integer position. Panics when out of bounds.
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        assert!(x < self.width && y < self.height);
        self.samples[y * self.width + x]
    }

    #[inline]
    pub fn row(&self, y: usize) -> &[f64] {
        &self.samples[y * self.width..(y + 1) * self.width]
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    /// Applies `f` to every sample, returning a new raster.
    pub fn map(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> Result<Self, ImageError> {
        Self::from_fn(self.width, self.height, |x, y| f(x, y, self.get(x, y)))
    }

    #[inline]
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64
    }

    /// Bilinear interpolation of the four samples surrounding `(x, y)`.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Result<f64, ImageError> {
        match bilinear_taps(self.width, self.height, x, y) {
            Some(taps) => Ok(taps.iter().map(|&(i, w)| w * self.samples[i]).sum()),
            None => Err(self.out_of_domain(x, y)),
        }
    }

    /// Bilinear sample that refuses to read any masked-out tap with nonzero
    /// weight. Returns `None` when out of bounds or touching the mask border.
    #[inline]
    pub fn sample_bilinear_masked(&self, mask: &RegionMask, x: f64, y: f64) -> Option<f64> {
        debug_assert!(mask.width == self.width && mask.height == self.height);
        if !self.contains(x, y) {
            return None;
        }
        let (x0, fx) = split_coordinate(x, self.width);
        let (y0, fy) = split_coordinate(y, self.height);
        let i = y0 * self.width + x0;
        // Neighbour offsets; a zero offset only occurs with a zero weight.
        let dx = usize::from(self.width > 1);
        let dy = if self.height > 1 { self.width } else { 0 };
        let taps = [
            (i, (1.0 - fx) * (1.0 - fy)),
            (i + dx, fx * (1.0 - fy)),
            (i + dy, (1.0 - fx) * fy),
            (i + dy + dx, fx * fy),
        ];
        let mut acc = 0.0;
        for (j, w) in taps {
            if w != 0.0 {
                if !mask.valid[j] {
                    return None;
                }
                acc += w * self.samples[j];
            }
        }
        Some(acc)
    }

    /// Central-difference gradient `(I_x, I_y)` at an interior pixel.
    pub fn gradient_central(&self, x: usize, y: usize) -> Result<(f64, f64), ImageError> {
        if x == 0 || y == 0 || x + 1 >= self.width || y + 1 >= self.height {
            return Err(self.out_of_domain(x as f64, y as f64));
        }
        let w = self.width;
        let c = y * w + x;
        let ix = (self.samples[c + 1] - self.samples[c - 1]) * 0.5;
        let iy = (self.samples[c + w] - self.samples[c - w]) * 0.5;
        Ok((ix, iy))
    }

    fn out_of_domain(&self, x: f64, y: f64) -> ImageError {
        ImageError::OutOfDomain {
            x,
            y,
            width: self.width,
            height: self.height,
        }
    }
}

/// Indices and weights of the bilinear taps for `(x, y)`, or `None` when the
/// coordinate lies outside `[0, w-1] x [0, h-1]`.
#[inline]
fn bilinear_taps(width: usize, height: usize, x: f64, y: f64) -> Option<[(usize, f64); 4]> {
    if !(x >= 0.0 && y >= 0.0 && x <= (width - 1) as f64 && y <= (height - 1) as f64) {
        return None;
    }
    let (x0, fx) = split_coordinate(x, width);
    let (y0, fy) = split_coordinate(y, height);
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    Some([
        (y0 * width + x0, (1.0 - fx) * (1.0 - fy)),
        (y0 * width + x1, fx * (1.0 - fy)),
        (y1 * width + x0, (1.0 - fx) * fy),
        (y1 * width + x1, fx * fy),
    ])
}

#[inline]
fn split_coordinate(c: f64, extent: usize) -> (usize, f64) {
    if extent == 1 {
        return (0, 0.0);
    }
    // `c >= 0` here, so truncation is floor.
    let base = (c as usize).min(extent - 2);
    (base, c - base as f64)
}

/// Boolean validity grid over a frame; `true` marks usable pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMask {
    width: usize,
    height: usize,
    valid: Vec<bool>,
}

impl RegionMask {
    pub fn new(width: usize, height: usize, valid: Vec<bool>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyDimensions { width, height });
        }
        if valid.len() != width * height {
            return Err(ImageError::BufferSize {
                expected: width * height,
                actual: valid.len(),
            });
        }
        Ok(Self {
            width,
            height,
            valid,
        })
    }

    /// Every pixel valid.
    pub fn full(width: usize, height: usize) -> Result<Self, ImageError> {
        Self::new(width, height, vec![true; width * height])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> bool,
    ) -> Result<Self, ImageError> {
        let mut valid = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                valid.push(f(x, y));
            }
        }
        Self::new(width, height, valid)
    }

    /// Disc of the given radius centred in the frame.
    pub fn circle(width: usize, height: usize, radius: f64) -> Result<Self, ImageError> {
        let cx = (width as f64 - 1.0) * 0.5;
        let cy = (height as f64 - 1.0) * 0.5;
        Self::from_fn(width, height, |x, y| {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            dx * dx + dy * dy <= radius * radius
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.valid
    }

    /// Validity at a signed position; out-of-bounds is invalid.
    #[inline]
    pub fn is_valid(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.valid[y as usize * self.width + x as usize]
    }

    pub fn count_valid(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn intersect(&self, other: &RegionMask) -> Result<RegionMask, ImageError> {
        self.check_same_size(other.width, other.height)?;
        let valid = self
            .valid
            .iter()
            .zip(&other.valid)
            .map(|(&a, &b)| a && b)
            .collect();
        RegionMask::new(self.width, self.height, valid)
    }

    pub fn check_same_size(&self, width: usize, height: usize) -> Result<(), ImageError> {
        if self.width != width || self.height != height {
            return Err(ImageError::DimensionMismatch(
                self.width,
                self.height,
                width,
                height,
            ));
        }
        Ok(())
    }
}

/// Centre positions where a `(2h+1)^2` template lies fully in-bounds and
/// inside the mask it was derived from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidityMap {
    half_extent: usize,
    inner: RegionMask,
}

impl ValidityMap {
    #[inline]
    pub fn half_extent(&self) -> usize {
        self.half_extent
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.inner.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.inner.height
    }

    #[inline]
    pub fn is_valid(&self, x: i64, y: i64) -> bool {
        self.inner.is_valid(x, y)
    }

    pub fn count_valid(&self) -> usize {
        self.inner.count_valid()
    }

    pub fn as_mask(&self) -> &RegionMask {
        &self.inner
    }

    /// Iterator over valid positions in row-major order.
    pub fn positions(&self) -> impl Iterator<Item = (i64, i64)> + '_ {
        let w = self.inner.width;
        self.inner
            .valid
            .iter()
            .enumerate()
            .filter(|(_, &v)| v)
            .map(move |(i, _)| ((i % w) as i64, (i / w) as i64))
    }
}

/// Erodes `mask` with a `(2h+1)^2` square structuring element; pixels
/// outside the frame count as invalid.
pub fn erode_for_template(mask: &RegionMask, half_extent: usize) -> ValidityMap {
    let (w, h) = (mask.width, mask.height);
    let span = 2 * half_extent + 1;
    let horizontal = erode_rows(&mask.valid, w, h, half_extent, span);
    let transposed = transpose(&horizontal, w, h);
    let vertical = erode_rows(&transposed, h, w, half_extent, span);
    ValidityMap {
        half_extent,
        inner: RegionMask {
            width: w,
            height: h,
            valid: transpose(&vertical, h, w),
        },
    }
}

// 1-D erosion along each row via prefix counts of valid pixels.
fn erode_rows(valid: &[bool], w: usize, h: usize, half: usize, span: usize) -> Vec<bool> {
    let mut out = vec![false; w * h];
    if span > w {
        return out;
    }
    let mut prefix = vec![0usize; w + 1];
    for y in 0..h {
        let row = &valid[y * w..(y + 1) * w];
        for (x, &v) in row.iter().enumerate() {
            prefix[x + 1] = prefix[x] + usize::from(v);
        }
        for x in half..w - half {
            out[y * w + x] = prefix[x + half + 1] - prefix[x - half] == span;
        }
    }
    out
}

fn transpose(src: &[bool], w: usize, h: usize) -> Vec<bool> {
    let mut out = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            out[x * h + y] = src[y * w + x];
        }
    }
    out
}
