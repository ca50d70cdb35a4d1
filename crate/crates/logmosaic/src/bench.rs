//! Side-by-side timing and accuracy of iterative optical-flow registration
//! and landmark-based registration on the same frame pair.

use std::time::Instant;

use logmosaic_core::affine::{corner_distance, AffineMotion};
use logmosaic_core::image::{Raster, RegionMask};
use logmosaic_core::kourogi::{run_kourogi_with, KourogiConfig, KourogiError, KourogiModel};
use logmosaic_core::registration::{register_with, RegistrationConfig, RegistrationError};
use logmosaic_core::runtime::Runtime;
use serde::Serialize;

pub const KOUROGI: &str = "kourogi";
pub const PMOTIONLOG: &str = "pmotionlog";

/// One CSV row. `corner_error_px` is NaN when the method failed or no
/// ground truth is known.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub method: &'static str,
    pub frame: usize,
    pub corner_error_px: f64,
    pub wall_ms: f64,
    /// Least-squares model fits performed.
    pub fits: usize,
    /// Optical-flow iterations (for the landmark method: of its initializer).
    pub iterations: usize,
    pub probes: usize,
    pub shifts: usize,
    #[serde(skip)]
    pub motion: Option<AffineMotion>,
    #[serde(skip)]
    pub failure: Option<String>,
}

impl BenchRow {
    fn new(method: &'static str, frame: usize) -> Self {
        Self {
            method,
            frame,
            corner_error_px: f64::NAN,
            wall_ms: 0.0,
            fits: 0,
            iterations: 0,
            probes: 0,
            shifts: 0,
            motion: None,
            failure: None,
        }
    }

    fn score(&mut self, truth: Option<&AffineMotion>, width: usize, height: usize) {
        if let (Some(m), Some(t)) = (&self.motion, truth) {
            self.corner_error_px = corner_distance(m, t, width, height);
        }
    }
}

/// Full-affine optical-flow settings used as the comparison baseline.
pub fn baseline_config(threshold: f64, max_iters: usize) -> KourogiConfig {
    KourogiConfig {
        threshold,
        max_iters,
        model: KourogiModel::FullAffine,
        ..KourogiConfig::default()
    }
}

/// Runs both methods on `reference -> object` and returns the Kourogi row
/// followed by the landmark row.
#[allow(clippy::too_many_arguments)]
pub fn bench_pair<R: Runtime>(
    reference: &Raster,
    object: &Raster,
    mask: &RegionMask,
    truth: Option<&AffineMotion>,
    frame: usize,
    kourogi: &KourogiConfig,
    registration: &RegistrationConfig,
    runtime: &R,
) -> [BenchRow; 2] {
    let (w, h) = (reference.width(), reference.height());

    let mut flow = BenchRow::new(KOUROGI, frame);
    let t = Instant::now();
    let res = run_kourogi_with(
        reference,
        object,
        mask,
        kourogi,
        AffineMotion::ZERO,
        runtime,
    );
    flow.wall_ms = t.elapsed().as_secs_f64() * 1e3;
    match res {
        Ok(out) => {
            flow.fits = out.iterations;
            flow.iterations = out.iterations;
            flow.motion = Some(out.motion);
        }
        Err(e) => {
            let done = match e {
                KourogiError::NoAcceptedPixels { iteration }
                | KourogiError::Fit { iteration, .. } => iteration - 1,
                _ => 0,
            };
            flow.fits = done;
            flow.iterations = done;
            flow.failure = Some(e.to_string());
        }
    }
    flow.score(truth, w, h);

    let mut log = BenchRow::new(PMOTIONLOG, frame);
    let t = Instant::now();
    let res = register_with(reference, object, mask, registration, None, runtime);
    log.wall_ms = t.elapsed().as_secs_f64() * 1e3;
    let (diag, init) = match &res {
        Ok(r) => (Some(&r.diagnostics), Some(&r.init)),
        Err(RegistrationError::Failed { partial, .. }) => {
            (Some(&partial.diagnostics), Some(&partial.init))
        }
        Err(_) => (None, None),
    };
    if let Some(d) = diag {
        log.fits = d.fits;
        log.probes = d.total_probes;
        log.shifts = d.total_shifts;
    }
    if let Some(i) = init {
        log.iterations = i.kourogi_iterations;
    }
    match res {
        Ok(r) => log.motion = Some(r.motion),
        Err(e) => log.failure = Some(e.to_string()),
    }
    log.score(truth, w, h);

    [flow, log]
}

/// Writes rows as CSV with the header
/// `method,frame,corner_error_px,wall_ms,fits,iterations,probes,shifts`.
pub fn write_csv<W: std::io::Write>(out: W, rows: &[BenchRow]) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(out);
    for row in rows {
        wtr.serialize(row)?;
    }
    wtr.flush()?;
    Ok(())
}
