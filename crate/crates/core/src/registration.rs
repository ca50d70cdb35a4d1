//! Landmark-based registration of an object frame against a reference frame.
//!
//! One call to [`register`] places `N` landmarks on the reference frame,
//! relocates each one in the object frame by logarithmic search seeded with
//! an initial motion estimate, filters the matches in two stages and fits the
//! final affine displacement field:
//!
//! 1. keep the `⌈a_min·N⌉` best-correlated matches together with every match
//!    scoring at least `c_min`, and fit a model to them;
//! 2. measure each survivor's distance to that model, keep the `⌈a_min·N⌉`
//!    closest together with every match closer than `e_max`, and refit.
//!
//! There is no iteration: exactly two least-squares fits per call.

use alloc::boxed::Box;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affine::{fit_affine_lsq, AffineMotion, DisplacementSample, FitError};
use crate::image::{erode_for_template, ImageError, Raster, RegionMask, ValidityMap};
use crate::kourogi::{run_kourogi_with, KourogiConfig};
use crate::matching::{log_search_prepared, PreparedTemplate, SearchConfig, TemplateSpec};
use crate::runtime::{elapsed, Runtime, Sequential};

pub mod filter;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    /// Start every search at zero displacement.
    Zero,
    /// Reuse the motion of the previous registration.
    Previous,
    /// Run a few translation-only pseudo-motion iterations.
    #[default]
    Kourogi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LandmarkLayout {
    #[default]
    Grid,
    /// Grid with a seeded offset of up to a quarter tile per landmark.
    GridJittered,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegistrationConfig {
    /// Number of landmarks `N`.
    pub landmarks: usize,
    pub c_min: f64,
    pub a_min: f64,
    pub e_max: f64,
    pub init_mode: InitMode,
    pub template: TemplateSpec,
    pub search: SearchConfig,
    pub layout: LandmarkLayout,
    pub seed: u64,
    pub kourogi: KourogiConfig,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            landmarks: 16,
            c_min: 0.7,
            a_min: 0.5,
            e_max: 2.0,
            init_mode: InitMode::Kourogi,
            template: TemplateSpec::default(),
            search: SearchConfig::default(),
            layout: LandmarkLayout::Grid,
            seed: 0,
            kourogi: KourogiConfig::default(),
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<(), RegistrationError> {
        let invalid = |msg| Err(RegistrationError::InvalidConfig(msg));
        if self.landmarks < 3 {
            return invalid("at least 3 landmarks are required");
        }
        if !(self.a_min > 0.0 && self.a_min <= 1.0) {
            return invalid("a_min must lie in (0, 1]");
        }
        if self.min_accepted() < 3 {
            return invalid("a_min * N must be at least 3");
        }
        if !(self.e_max > 0.0) {
            return invalid("e_max must be positive");
        }
        if !(-1.0..=1.0).contains(&self.c_min) {
            return invalid("c_min must lie in [-1, 1]");
        }
        self.search
            .validate()
            .map_err(|_| RegistrationError::InvalidConfig("invalid search configuration"))?;
        self.kourogi
            .validate()
            .map_err(|_| RegistrationError::InvalidConfig("invalid kourogi configuration"))?;
        Ok(())
    }

    /// `⌈a_min·N⌉`, the guaranteed survivor count of each filter stage.
    pub fn min_accepted(&self) -> usize {
        // Absorb representation error such as 0.3 * 10 = 3.0000000000000004.
        libm::ceil(self.a_min * self.landmarks as f64 - 1e-9) as usize
    }
}

/// One landmark and what became of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    /// Reference-frame position.
    pub landmark: (i64, i64),
    /// Matched position minus landmark, absent when the search failed.
    pub displacement: Option<(f64, f64)>,
    pub score: Option<f64>,
    pub probes: usize,
    pub shifts: usize,
    /// Distance to the stage-1 model, for stage-1 survivors.
    pub residual: Option<f64>,
    pub stage1_pass: bool,
    pub stage2_pass: bool,
    pub error: Option<String>,
}

impl MatchRecord {
    fn sample(&self) -> Option<DisplacementSample> {
        let (u, v) = self.displacement?;
        Some(DisplacementSample::new(
            self.landmark.0 as f64,
            self.landmark.1 as f64,
            u,
            v,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTimings {
    pub init_ms: f64,
    pub search_ms: f64,
    pub filter_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct InitReport {
    pub mode: InitMode,
    pub motion: AffineMotion,
    /// The requested mode could not be used and zero motion was substituted.
    pub fallback: bool,
    pub kourogi_iterations: usize,
    pub kourogi_accepted: Vec<usize>,
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub landmarks_requested: usize,
    pub landmarks_placed: usize,
    pub landmarks_dropped: usize,
    pub min_accepted: usize,
    pub stage1_survivors: usize,
    pub stage2_survivors: usize,
    pub total_probes: usize,
    pub total_shifts: usize,
    /// Least-squares fits performed; 2 for every completed registration.
    pub fits: usize,
    pub timings: StageTimings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    pub motion: AffineMotion,
    /// Model fitted to the stage-1 survivors.
    pub stage1_motion: AffineMotion,
    pub matches: Vec<MatchRecord>,
    pub init: InitReport,
    pub diagnostics: Diagnostics,
}

impl RegistrationResult {
    /// Records in the final accepted set.
    pub fn accepted(&self) -> impl Iterator<Item = &MatchRecord> {
        self.matches.iter().filter(|m| m.stage2_pass)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FailureReason {
    InsufficientArea { valid: usize, requested: usize },
    TooFewLandmarks { placed: usize },
    TooFewStage1 { survivors: usize },
    TooFewStage2 { survivors: usize },
    Fit(FitError),
}

impl fmt::Display for FailureReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FailureReason::InsufficientArea { valid, requested } => write!(
                f,
                "only {valid} valid template positions for {requested} landmarks"
            ),
            FailureReason::TooFewLandmarks { placed } => {
                write!(f, "only {placed} landmarks could be placed")
            }
            FailureReason::TooFewStage1 { survivors } => {
                write!(f, "only {survivors} matches survived the correlation stage")
            }
            FailureReason::TooFewStage2 { survivors } => {
                write!(f, "only {survivors} matches survived the residual stage")
            }
            FailureReason::Fit(e) => write!(f, "{e}"),
        }
    }
}

/// Whatever was computed before a registration failed.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialRegistration {
    pub matches: Vec<MatchRecord>,
    pub init: InitReport,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegistrationError {
    #[error("invalid registration config: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("registration failed: {reason}")]
    Failed {
        reason: FailureReason,
        partial: Box<PartialRegistration>,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlacementError {
    #[error("only {valid} valid positions for {requested} landmarks")]
    InsufficientArea { valid: usize, requested: usize },
}

/// Landmark positions and how many tiles yielded none.
#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    pub positions: Vec<(i64, i64)>,
    pub dropped: usize,
}

/// Distributes `n` landmarks over the valid region of the reference frame.
///
/// The bounding box of `valid` is tiled in rows of near-equal length; each
/// tile centre (optionally jittered) snaps to the nearest valid, unused
/// position whose reference template has nonzero variance. Tiles with no
/// such position within one tile extent are dropped with a warning.
pub fn place_landmarks(
    valid: &ValidityMap,
    reference: &Raster,
    n: usize,
    layout: LandmarkLayout,
    seed: u64,
) -> Result<Placement, PlacementError> {
    let count = valid.count_valid();
    if count < n || n == 0 {
        return Err(PlacementError::InsufficientArea {
            valid: count,
            requested: n,
        });
    }
    let (mut x0, mut y0, mut x1, mut y1) = (i64::MAX, i64::MAX, i64::MIN, i64::MIN);
    for (x, y) in valid.positions() {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    let bw = (x1 - x0 + 1) as f64;
    let bh = (y1 - y0 + 1) as f64;
    let rows = (libm::round(libm::sqrt(n as f64 * bh / bw)) as usize).clamp(1, n);
    let tile_h = bh / rows as f64;

    let spec = TemplateSpec::new(valid.half_extent().max(1)).ok();
    let usable = |x: i64, y: i64| -> bool {
        valid.is_valid(x, y)
            && match (spec, valid.half_extent()) {
                (Some(s), h) if h > 0 => PreparedTemplate::extract(reference, x, y, s).is_ok(),
                _ => true,
            }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions: Vec<(i64, i64)> = Vec::with_capacity(n);
    let mut dropped = 0;
    for r in 0..rows {
        let in_row = n / rows + usize::from(r < n % rows);
        let tile_w = bw / in_row as f64;
        for c in 0..in_row {
            let mut cx = x0 as f64 + (c as f64 + 0.5) * tile_w;
            let mut cy = y0 as f64 + (r as f64 + 0.5) * tile_h;
            if layout == LandmarkLayout::GridJittered {
                cx += rng.random_range(-0.25..=0.25) * tile_w;
                cy += rng.random_range(-0.25..=0.25) * tile_h;
            }
            let (cx, cy) = (libm::round(cx) as i64, libm::round(cy) as i64);
            let radius = libm::ceil(tile_w.max(tile_h)) as i64;
            match nearest(cx, cy, radius, |x, y| {
                !positions.contains(&(x, y)) && usable(x, y)
            }) {
                Some(p) => positions.push(p),
                None => {
                    log::warn!(
                        "no usable landmark position near tile centre ({cx}, {cy}); dropped"
                    );
                    dropped += 1;
                }
            }
        }
    }
    Ok(Placement { positions, dropped })
}

// Nearest position (Euclidean; earlier in ring scan order on ties) within
// Chebyshev `radius` of (cx, cy) that satisfies `accept`.
fn nearest(cx: i64, cy: i64, radius: i64, accept: impl Fn(i64, i64) -> bool) -> Option<(i64, i64)> {
    let mut best: Option<((i64, i64), i64)> = None;
    for r in 0..=radius {
        if let Some((_, d2)) = best {
            if r * r > d2 {
                break;
            }
        }
        for dy in -r..=r {
            for dx in -r..=r {
                if dx.abs() != r && dy.abs() != r {
                    continue;
                }
                let d2 = dx * dx + dy * dy;
                if best.is_some_and(|(_, b)| d2 >= b) {
                    continue;
                }
                if accept(cx + dx, cy + dy) {
                    best = Some(((cx + dx, cy + dy), d2));
                }
            }
        }
    }
    best.map(|(p, _)| p)
}

/// Initial compensated motion for a registration.
pub fn initialize_motion<R: Runtime>(
    prev: Option<&RegistrationResult>,
    reference: &Raster,
    object: &Raster,
    mask: &RegionMask,
    config: &RegistrationConfig,
    runtime: &R,
) -> InitReport {
    let mut report = InitReport {
        mode: config.init_mode,
        ..InitReport::default()
    };
    match config.init_mode {
        InitMode::Zero => {}
        InitMode::Previous => match prev {
            Some(p) => report.motion = p.motion,
            None => {
                report.fallback = true;
                report.message = Some("no previous registration; using zero motion".into());
            }
        },
        InitMode::Kourogi => {
            match run_kourogi_with(
                reference,
                object,
                mask,
                &config.kourogi,
                AffineMotion::ZERO,
                runtime,
            ) {
                Ok(out) => {
                    report.motion = out.motion;
                    report.kourogi_iterations = out.iterations;
                    report.kourogi_accepted = out.accepted;
                }
                Err(e) => {
                    report.fallback = true;
                    report.message = Some(e.to_string());
                }
            }
        }
    }
    report
}

/// Registers `object` against `reference` on the calling thread.
pub fn register(
    reference: &Raster,
    object: &Raster,
    mask: &RegionMask,
    config: &RegistrationConfig,
    prev: Option<&RegistrationResult>,
) -> Result<RegistrationResult, RegistrationError> {
    register_with(reference, object, mask, config, prev, &Sequential)
}

/// Registers `object` against `reference`, running per-landmark searches and
/// the initializer's per-row work on `runtime`.
pub fn register_with<R: Runtime>(
    reference: &Raster,
    object: &Raster,
    mask: &RegionMask,
    config: &RegistrationConfig,
    prev: Option<&RegistrationResult>,
    runtime: &R,
) -> Result<RegistrationResult, RegistrationError> {
    config.validate()?;
    mask.check_same_size(reference.width(), reference.height())?;
    mask.check_same_size(object.width(), object.height())?;

    let t0 = runtime.now_ms();
    let init = initialize_motion(prev, reference, object, mask, config, runtime);
    let t1 = runtime.now_ms();

    let mut diagnostics = Diagnostics {
        landmarks_requested: config.landmarks,
        min_accepted: config.min_accepted(),
        ..Diagnostics::default()
    };
    diagnostics.timings.init_ms = elapsed(t0, t1);
    let fail = |reason, matches: Vec<MatchRecord>, init: InitReport, diagnostics: Diagnostics| {
        RegistrationError::Failed {
            reason,
            partial: Box::new(PartialRegistration {
                matches,
                init,
                diagnostics,
            }),
        }
    };

    let validity = erode_for_template(mask, config.template.half_extent());
    let placement = match place_landmarks(
        &validity,
        reference,
        config.landmarks,
        config.layout,
        config.seed,
    ) {
        Ok(p) => p,
        Err(PlacementError::InsufficientArea { valid, requested }) => {
            return Err(fail(
                FailureReason::InsufficientArea { valid, requested },
                Vec::new(),
                init,
                diagnostics,
            ))
        }
    };
    diagnostics.landmarks_placed = placement.positions.len();
    diagnostics.landmarks_dropped = placement.dropped;

    let mut matches = search_landmarks(
        reference,
        object,
        &placement.positions,
        &init.motion,
        config,
        &validity,
        runtime,
    );
    let t2 = runtime.now_ms();
    diagnostics.timings.search_ms = elapsed(t1, t2);
    diagnostics.total_probes = matches.iter().map(|m| m.probes).sum();
    diagnostics.total_shifts = matches.iter().map(|m| m.shifts).sum();
    if matches.len() < 3 {
        return Err(fail(
            FailureReason::TooFewLandmarks {
                placed: matches.len(),
            },
            matches,
            init,
            diagnostics,
        ));
    }

    let (stage1_motion, motion) = match estimate_motion(&mut matches, config, &mut diagnostics) {
        Ok(m) => m,
        Err(reason) => return Err(fail(reason, matches, init, diagnostics)),
    };
    diagnostics.timings.filter_ms = elapsed(t2, runtime.now_ms());

    Ok(RegistrationResult {
        motion,
        stage1_motion,
        matches,
        init,
        diagnostics,
    })
}

/// The filter-and-fit half of a registration: stage 1 selection by score,
/// a first fit, stage 2 selection by residual against it, and the final
/// fit. Updates the records' stage flags and residuals, and the survivor
/// and fit counters in `diagnostics`. Returns `(stage1_motion, motion)`.
pub fn estimate_motion(
    matches: &mut [MatchRecord],
    config: &RegistrationConfig,
    diagnostics: &mut Diagnostics,
) -> Result<(AffineMotion, AffineMotion), FailureReason> {
    for m in matches.iter_mut() {
        m.stage1_pass = false;
        m.stage2_pass = false;
        m.residual = None;
    }
    let keep = config.min_accepted();
    let scores: Vec<Option<f64>> = matches.iter().map(|m| m.score).collect();
    let stage1 = filter::select_by_score(&scores, keep, config.c_min);
    for (m, &pass) in matches.iter_mut().zip(&stage1) {
        m.stage1_pass = pass;
    }
    let survivors1: Vec<DisplacementSample> = matches
        .iter()
        .filter(|m| m.stage1_pass)
        .filter_map(MatchRecord::sample)
        .collect();
    diagnostics.stage1_survivors = survivors1.len();
    if survivors1.len() < 3 {
        return Err(FailureReason::TooFewStage1 {
            survivors: survivors1.len(),
        });
    }
    diagnostics.fits += 1;
    let stage1_motion = fit_affine_lsq(&survivors1).map_err(FailureReason::Fit)?;

    for m in matches.iter_mut().filter(|m| m.stage1_pass) {
        if let Some((u, v)) = m.displacement {
            let (uc, vc) = stage1_motion.evaluate(m.landmark.0 as f64, m.landmark.1 as f64);
            m.residual = Some(libm::hypot(u - uc, v - vc));
        }
    }
    let residuals: Vec<Option<f64>> = matches
        .iter()
        .map(|m| if m.stage1_pass { m.residual } else { None })
        .collect();
    let stage2 = filter::select_by_residual(&residuals, keep, config.e_max);
    for (m, &pass) in matches.iter_mut().zip(&stage2) {
        m.stage2_pass = pass;
    }
    let survivors2: Vec<DisplacementSample> = matches
        .iter()
        .filter(|m| m.stage2_pass)
        .filter_map(MatchRecord::sample)
        .collect();
    diagnostics.stage2_survivors = survivors2.len();
    if survivors2.len() < 3 {
        return Err(FailureReason::TooFewStage2 {
            survivors: survivors2.len(),
        });
    }
    diagnostics.fits += 1;
    let motion = fit_affine_lsq(&survivors2).map_err(FailureReason::Fit)?;
    Ok((stage1_motion, motion))
}

fn search_landmarks<R: Runtime>(
    reference: &Raster,
    object: &Raster,
    landmarks: &[(i64, i64)],
    init: &AffineMotion,
    config: &RegistrationConfig,
    validity: &ValidityMap,
    runtime: &R,
) -> Vec<MatchRecord> {
    runtime.map_indexed(landmarks.len(), |i| {
        let (x, y) = landmarks[i];
        let mut record = MatchRecord {
            landmark: (x, y),
            displacement: None,
            score: None,
            probes: 0,
            shifts: 0,
            residual: None,
            stage1_pass: false,
            stage2_pass: false,
            error: None,
        };
        let (uc, vc) = init.evaluate(x as f64, y as f64);
        let start = (x + libm::round(uc) as i64, y + libm::round(vc) as i64);
        let result = PreparedTemplate::extract(reference, x, y, config.template)
            .and_then(|t| log_search_prepared(&t, object, start, &config.search, validity));
        match result {
            Ok(m) => {
                record.displacement = Some(((m.u - x) as f64, (m.v - y) as f64));
                record.score = Some(m.score);
                record.probes = m.probes;
                record.shifts = m.shifts;
            }
            Err(e) => record.error = Some(e.to_string()),
        }
        record
    })
}
