//! Iterative pseudo-motion estimation from spatial and temporal gradients.
//!
//! Each iteration computes, at every interior mask pixel of the previous
//! frame, the pseudo motion
//!
//! ```text
//! u_p = -I_t / I_x + u_c,   v_p = -I_t / I_y + v_c,
//! I_t = I(x + u_c, y + v_c, t) - I(x, y, t - 1)
//! ```
//!
//! keeps the pixels that pass the acceptance test, fits a global model to the
//! survivors and uses it as the next compensated motion `(u_c, v_c)`.
//! Gradients are taken on the previous frame. Note that the two components
//! divide by `I_x` and `I_y` independently; this is deliberate and differs
//! from the classical single-constraint optical-flow equation.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affine::{corner_distance, fit_affine_lsq, fit_translation, AffineMotion};
use crate::affine::{DisplacementSample, FitError};
use crate::image::{erode_for_template, ImageError, Raster, RegionMask};
use crate::runtime::{Runtime, Sequential};

/// Gradient magnitude (luminance/pixel) below which a component counts as 0.
pub const GRADIENT_EPS: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KourogiModel {
    #[default]
    TranslationOnly,
    FullAffine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KourogiConfig {
    /// Gray-level threshold `T` of the residual test.
    pub threshold: f64,
    pub max_iters: usize,
    /// Stop once the corner displacement changes by less than this (pixels).
    pub min_delta: f64,
    pub model: KourogiModel,
}

impl Default for KourogiConfig {
    fn default() -> Self {
        Self {
            threshold: 5.0,
            max_iters: 10,
            min_delta: 0.1,
            model: KourogiModel::TranslationOnly,
        }
    }
}

impl KourogiConfig {
    pub fn validate(&self) -> Result<(), KourogiError> {
        if !(self.threshold > 0.0) {
            return Err(KourogiError::InvalidConfig("threshold must be positive"));
        }
        if self.max_iters == 0 {
            return Err(KourogiError::InvalidConfig("max_iters must be at least 1"));
        }
        if !(self.min_delta >= 0.0) {
            return Err(KourogiError::InvalidConfig(
                "min_delta must be non-negative",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KourogiError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("mask has no interior pixels")]
    EmptyMask,
    #[error("no pixel passed the acceptance test in iteration {iteration}")]
    NoAcceptedPixels { iteration: usize },
    #[error("model fit failed in iteration {iteration}: {source}")]
    Fit { iteration: usize, source: FitError },
}

/// Raw terms of the pseudo-motion equation at one pixel. `u_p`/`v_p` are
/// infinite or NaN when the matching gradient component is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoMotion {
    pub ix: f64,
    pub iy: f64,
    pub it: f64,
    pub u_p: f64,
    pub v_p: f64,
}

/// Evaluates the pseudo-motion equation at interior pixel `(x, y)` without
/// any acceptance filtering.
pub fn pseudo_motion(
    prev: &Raster,
    curr: &Raster,
    x: usize,
    y: usize,
    motion: &AffineMotion,
) -> Result<PseudoMotion, ImageError> {
    let (ix, iy) = prev.gradient_central(x, y)?;
    let (uc, vc) = motion.evaluate(x as f64, y as f64);
    let it = curr.sample_bilinear(x as f64 + uc, y as f64 + vc)? - prev.get(x, y);
    Ok(PseudoMotion {
        ix,
        iy,
        it,
        u_p: -it / ix + uc,
        v_p: -it / iy + vc,
    })
}

/// Acceptance criteria for a pseudo-motion estimate:
/// (a) both gradient components nonzero, (b) the displaced position lies
/// inside the mask, (c) the luminance residual there is below `threshold`.
#[allow(clippy::too_many_arguments)]
pub fn acceptance_test(
    prev: &Raster,
    curr: &Raster,
    mask: &RegionMask,
    x: usize,
    y: usize,
    u_p: f64,
    v_p: f64,
    threshold: f64,
) -> bool {
    let Ok((ix, iy)) = prev.gradient_central(x, y) else {
        return false;
    };
    if !(libm::fabs(ix) > GRADIENT_EPS && libm::fabs(iy) > GRADIENT_EPS) {
        return false;
    }
    let Some(moved) = curr.sample_bilinear_masked(mask, x as f64 + u_p, y as f64 + v_p) else {
        return false;
    };
    libm::fabs(moved - prev.get(x, y)) < threshold
}

/// Pseudo motion at `(x, y)` if it passes every acceptance criterion.
///
/// Besides the acceptance test, estimates whose gradient quotient exceeds
/// the image diagonal are rejected, and the compensated position must be
/// readable inside the mask.
pub fn pseudo_motion_at(
    prev: &Raster,
    curr: &Raster,
    mask: &RegionMask,
    x: usize,
    y: usize,
    motion: &AffineMotion,
    threshold: f64,
) -> Option<(f64, f64)> {
    let (ix, iy) = prev.gradient_central(x, y).ok()?;
    if !(libm::fabs(ix) > GRADIENT_EPS && libm::fabs(iy) > GRADIENT_EPS) {
        return None;
    }
    let diagonal = libm::hypot(prev.width() as f64, prev.height() as f64);
    accepted_motion(prev, curr, mask, x, y, ix, iy, motion, threshold, diagonal)
}

// Criteria (b) and (c) plus the magnitude guard, given gradients that
// already pass (a).
#[allow(clippy::too_many_arguments)]
#[inline]
fn accepted_motion(
    prev: &Raster,
    curr: &Raster,
    mask: &RegionMask,
    x: usize,
    y: usize,
    ix: f64,
    iy: f64,
    motion: &AffineMotion,
    threshold: f64,
    diagonal: f64,
) -> Option<(f64, f64)> {
    let (xf, yf) = (x as f64, y as f64);
    let (uc, vc) = motion.evaluate(xf, yf);
    let reference = prev.get(x, y);
    let compensated = curr.sample_bilinear_masked(mask, xf + uc, yf + vc)?;
    let it = compensated - reference;
    let (du, dv) = (-it / ix, -it / iy);
    if !(libm::fabs(du) <= diagonal && libm::fabs(dv) <= diagonal) {
        return None;
    }
    let (u_p, v_p) = (du + uc, dv + vc);
    let moved = curr.sample_bilinear_masked(mask, xf + u_p, yf + v_p)?;
    (libm::fabs(moved - reference) < threshold).then_some((u_p, v_p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KourogiOutcome {
    pub motion: AffineMotion,
    pub iterations: usize,
    /// Accepted pixel count per iteration.
    pub accepted: Vec<usize>,
    /// Fitted model after each iteration.
    pub trajectory: Vec<AffineMotion>,
    /// Whether the loop stopped on `min_delta` rather than `max_iters`.
    pub converged: bool,
}

/// Runs the iteration on the calling thread.
pub fn run_kourogi(
    prev: &Raster,
    curr: &Raster,
    mask: &RegionMask,
    config: &KourogiConfig,
    initial: AffineMotion,
) -> Result<KourogiOutcome, KourogiError> {
    run_kourogi_with(prev, curr, mask, config, initial, &Sequential)
}

/// Runs the iteration, distributing image rows over `runtime`.
pub fn run_kourogi_with<R: Runtime>(
    prev: &Raster,
    curr: &Raster,
    mask: &RegionMask,
    config: &KourogiConfig,
    initial: AffineMotion,
    runtime: &R,
) -> Result<KourogiOutcome, KourogiError> {
    config.validate()?;
    mask.check_same_size(prev.width(), prev.height())?;
    mask.check_same_size(curr.width(), curr.height())?;
    // Pixels whose gradient stencil lies inside the mask.
    let interior = erode_for_template(mask, 1);
    if interior.count_valid() == 0 {
        return Err(KourogiError::EmptyMask);
    }

    let (w, h) = (prev.width(), prev.height());
    let mut motion = initial;
    let mut outcome = KourogiOutcome {
        motion,
        iterations: 0,
        accepted: Vec::new(),
        trajectory: Vec::new(),
        converged: false,
    };

    // Gradients of `prev` are fixed across iterations; keep only pixels
    // passing criterion (a).
    let diagonal = libm::hypot(w as f64, h as f64);
    let candidates: Vec<Vec<(usize, f64, f64)>> = runtime.map_indexed(h, |y| {
        (0..w)
            .filter(|&x| interior.is_valid(x as i64, y as i64))
            .filter_map(|x| {
                let (ix, iy) = prev.gradient_central(x, y).ok()?;
                (libm::fabs(ix) > GRADIENT_EPS && libm::fabs(iy) > GRADIENT_EPS)
                    .then_some((x, ix, iy))
            })
            .collect()
    });

    for iteration in 1..=config.max_iters {
        let rows = runtime.map_indexed(h, |y| {
            candidates[y]
                .iter()
                .filter_map(|&(x, ix, iy)| {
                    let (u, v) = accepted_motion(
                        prev,
                        curr,
                        mask,
                        x,
                        y,
                        ix,
                        iy,
                        &motion,
                        config.threshold,
                        diagonal,
                    )?;
                    Some(DisplacementSample::new(x as f64, y as f64, u, v))
                })
                .collect::<Vec<_>>()
        });
        let samples: Vec<DisplacementSample> = rows.into_iter().flatten().collect();
        if samples.is_empty() {
            return Err(KourogiError::NoAcceptedPixels { iteration });
        }
        let fitted = match config.model {
            KourogiModel::TranslationOnly => fit_translation(&samples),
            KourogiModel::FullAffine => fit_affine_lsq(&samples),
        }
        .map_err(|source| KourogiError::Fit { iteration, source })?;

        let delta = corner_distance(&fitted, &motion, w, h);
        motion = fitted;
        outcome.iterations = iteration;
        outcome.accepted.push(samples.len());
        outcome.trajectory.push(fitted);
        if delta < config.min_delta {
            outcome.converged = true;
            break;
        }
    }
    outcome.motion = motion;
    Ok(outcome)
}
