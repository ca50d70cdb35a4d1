//! Incremental mosaic construction in first-frame coordinates.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affine::{AffineMotion, SingularTransform};
use crate::image::{ImageError, Raster, RegionMask};
use crate::registration::{
    register_with, PartialRegistration, RegistrationConfig, RegistrationError, RegistrationResult,
};
use crate::runtime::Runtime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompositePolicy {
    /// The newest frame overwrites.
    #[default]
    LastWins,
    /// Pixels keep the first value written.
    FirstWins,
    /// Running average over all contributions.
    Mean,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MosaicError {
    #[error("no frames to mosaic")]
    NoFrames,
    #[error("frame {index} is {width}x{height}, expected {expected_width}x{expected_height}")]
    FrameSize {
        index: usize,
        width: usize,
        height: usize,
        expected_width: usize,
        expected_height: usize,
    },
    #[error(transparent)]
    Singular(#[from] SingularTransform),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Registration(RegistrationError),
}

/// Accumulated luminance over a growable rectangle. Canvas pixel `(i, j)`
/// sits at first-frame position `(i + origin.0, j + origin.1)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MosaicCanvas {
    width: usize,
    height: usize,
    origin: (i64, i64),
    value: Vec<f64>,
    count: Vec<u32>,
    /// Motion from the first frame to the most recently composited frame.
    pub chained: AffineMotion,
}

impl MosaicCanvas {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn origin(&self) -> (i64, i64) {
        self.origin
    }

    /// Value at first-frame integer position `(x, y)`, if anything was
    /// composited there.
    pub fn get(&self, x: i64, y: i64) -> Option<f64> {
        let i = self.index(x, y)?;
        (self.count[i] > 0).then(|| self.value[i])
    }

    pub fn count_at(&self, x: i64, y: i64) -> u32 {
        self.index(x, y).map_or(0, |i| self.count[i])
    }

    pub fn covered_pixels(&self) -> usize {
        self.count.iter().filter(|&&c| c > 0).count()
    }

    /// Canvas as an image, with uncovered pixels set to `fill`.
    pub fn to_raster(&self, fill: f64) -> Option<Raster> {
        if self.width == 0 {
            return None;
        }
        let samples = self
            .value
            .iter()
            .zip(&self.count)
            .map(|(&v, &c)| if c > 0 { v } else { fill })
            .collect();
        Raster::new(self.width, self.height, samples).ok()
    }

    pub fn coverage(&self) -> Option<RegionMask> {
        if self.width == 0 {
            return None;
        }
        RegionMask::new(
            self.width,
            self.height,
            self.count.iter().map(|&c| c > 0).collect(),
        )
        .ok()
    }

    fn index(&self, x: i64, y: i64) -> Option<usize> {
        let (i, j) = (x - self.origin.0, y - self.origin.1);
        (i >= 0 && j >= 0 && (i as usize) < self.width && (j as usize) < self.height)
            .then(|| j as usize * self.width + i as usize)
    }

    /// Grows the canvas by whole pixels so it spans `[x0, x1] x [y0, y1]`.
    fn include(&mut self, x0: i64, y0: i64, x1: i64, y1: i64) {
        let (nx0, ny0, nx1, ny1) = if self.width == 0 {
            (x0, y0, x1, y1)
        } else {
            (
                x0.min(self.origin.0),
                y0.min(self.origin.1),
                x1.max(self.origin.0 + self.width as i64 - 1),
                y1.max(self.origin.1 + self.height as i64 - 1),
            )
        };
        let (nw, nh) = ((nx1 - nx0 + 1) as usize, (ny1 - ny0 + 1) as usize);
        if (nx0, ny0, nw, nh) == (self.origin.0, self.origin.1, self.width, self.height) {
            return;
        }
        let mut value = vec![0.0; nw * nh];
        let mut count = vec![0u32; nw * nh];
        let (dx, dy) = (
            (self.origin.0 - nx0) as usize,
            (self.origin.1 - ny0) as usize,
        );
        for j in 0..self.height {
            let src = j * self.width;
            let dst = (j + dy) * nw + dx;
            value[dst..dst + self.width].copy_from_slice(&self.value[src..src + self.width]);
            count[dst..dst + self.width].copy_from_slice(&self.count[src..src + self.width]);
        }
        *self = Self {
            width: nw,
            height: nh,
            origin: (nx0, ny0),
            value,
            count,
            chained: self.chained,
        };
    }

    /// Backward-warps `frame` into the canvas. `first_to_frame` maps
    /// first-frame positions to positions in `frame`.
    pub fn warp_into<R: Runtime>(
        &mut self,
        frame: &Raster,
        mask: &RegionMask,
        first_to_frame: &AffineMotion,
        policy: CompositePolicy,
        runtime: &R,
    ) -> Result<(), MosaicError> {
        mask.check_same_size(frame.width(), frame.height())?;
        let back = first_to_frame.invert()?;
        let (wm, hm) = ((frame.width() - 1) as f64, (frame.height() - 1) as f64);
        let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for (cx, cy) in [(0.0, 0.0), (wm, 0.0), (0.0, hm), (wm, hm)] {
            let (px, py) = back.map_point(cx, cy);
            x0 = x0.min(px);
            y0 = y0.min(py);
            x1 = x1.max(px);
            y1 = y1.max(py);
        }
        let (x0, y0) = (libm::floor(x0) as i64, libm::floor(y0) as i64);
        let (x1, y1) = (libm::ceil(x1) as i64, libm::ceil(y1) as i64);
        self.include(x0, y0, x1, y1);

        let rows = runtime.map_indexed((y1 - y0 + 1) as usize, |r| {
            let y = y0 + r as i64;
            (x0..=x1)
                .map(|x| {
                    let (fx, fy) = first_to_frame.map_point(x as f64, y as f64);
                    frame.sample_bilinear_masked(mask, fx, fy)
                })
                .collect::<Vec<_>>()
        });
        for (r, row) in rows.into_iter().enumerate() {
            let y = y0 + r as i64;
            for (c, s) in row.into_iter().enumerate() {
                let Some(s) = s else { continue };
                let i = self
                    .index(x0 + c as i64, y)
                    .expect("canvas covers footprint");
                let n = self.count[i];
                self.value[i] = match policy {
                    _ if n == 0 => s,
                    CompositePolicy::LastWins => s,
                    CompositePolicy::FirstWins => self.value[i],
                    CompositePolicy::Mean => self.value[i] + (s - self.value[i]) / (n + 1) as f64,
                };
                self.count[i] = n.saturating_add(1);
            }
        }
        self.chained = *first_to_frame;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameStatus {
    /// Registered and composited.
    Ok,
    /// Registration failed; not composited.
    Failed,
    /// Registered, but the chained motion could not be warped.
    Skipped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutcome {
    pub index: usize,
    pub status: FrameStatus,
    /// Frame this one was registered against (`None` for the first frame).
    pub reference: Option<usize>,
    /// Motion from the reference frame to this one.
    pub step: Option<AffineMotion>,
    /// Motion from the first frame to this one. For failed frames this is
    /// the reference frame's chained motion carried forward unchanged.
    pub chained: AffineMotion,
    pub registration: Option<RegistrationResult>,
    pub partial: Option<Box<PartialRegistration>>,
    pub error: Option<RegistrationError>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mosaic {
    pub canvas: MosaicCanvas,
    pub frames: Vec<FrameOutcome>,
}

impl Mosaic {
    pub fn ok_count(&self) -> usize {
        self.frames
            .iter()
            .filter(|f| f.status == FrameStatus::Ok)
            .count()
    }
}

/// Registers each frame against the most recent successfully registered
/// frame and composites it into first-frame coordinates. Per-frame
/// registration failures are recorded, not returned.
pub fn build_mosaic<R: Runtime>(
    frames: &[(Raster, RegionMask)],
    config: &RegistrationConfig,
    policy: CompositePolicy,
    runtime: &R,
) -> Result<Mosaic, MosaicError> {
    let (first, first_mask) = frames.first().ok_or(MosaicError::NoFrames)?;
    let (w, h) = (first.width(), first.height());
    for (index, (img, mask)) in frames.iter().enumerate() {
        for (width, height) in [(img.width(), img.height()), (mask.width(), mask.height())] {
            if (width, height) != (w, h) {
                return Err(MosaicError::FrameSize {
                    index,
                    width,
                    height,
                    expected_width: w,
                    expected_height: h,
                });
            }
        }
    }
    config.validate().map_err(MosaicError::Registration)?;

    let mut canvas = MosaicCanvas::new();
    canvas.warp_into(first, first_mask, &AffineMotion::ZERO, policy, runtime)?;
    let mut outcomes = vec![FrameOutcome {
        index: 0,
        status: FrameStatus::Ok,
        reference: None,
        step: None,
        chained: AffineMotion::ZERO,
        registration: None,
        partial: None,
        error: None,
    }];
    // Last successfully registered frame and its chained motion.
    let mut anchor = 0usize;
    let mut anchor_chain = AffineMotion::ZERO;
    let mut last_result: Option<RegistrationResult> = None;

    for (index, (img, mask)) in frames.iter().enumerate().skip(1) {
        let (ref_img, ref_mask) = &frames[anchor];
        let joint = ref_mask.intersect(mask)?;
        let mut outcome = FrameOutcome {
            index,
            status: FrameStatus::Failed,
            reference: Some(anchor),
            step: None,
            chained: anchor_chain,
            registration: None,
            partial: None,
            error: None,
        };
        match register_with(ref_img, img, &joint, config, last_result.as_ref(), runtime) {
            Ok(res) => {
                let chained = AffineMotion::compose(&anchor_chain, &res.motion);
                outcome.step = Some(res.motion);
                outcome.chained = chained;
                match canvas.warp_into(img, mask, &chained, policy, runtime) {
                    Ok(()) => {
                        outcome.status = FrameStatus::Ok;
                        anchor = index;
                        anchor_chain = chained;
                        last_result = Some(res.clone());
                    }
                    Err(e) => {
                        log::warn!("frame {index}: {e}");
                        outcome.status = FrameStatus::Skipped;
                    }
                }
                outcome.registration = Some(res);
            }
            Err(RegistrationError::Failed { reason, partial }) => {
                log::warn!("frame {index}: {reason}");
                outcome.error = Some(RegistrationError::Failed {
                    reason,
                    partial: partial.clone(),
                });
                outcome.partial = Some(partial);
            }
            Err(e) => {
                log::warn!("frame {index}: {e}");
                outcome.error = Some(e);
            }
        }
        outcomes.push(outcome);
    }
    Ok(Mosaic {
        canvas,
        frames: outcomes,
    })
}
