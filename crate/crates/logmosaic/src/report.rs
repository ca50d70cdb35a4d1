//! JSON run report.
//!
//! The layout is versioned by [`SCHEMA`] and [`SCHEMA_VERSION`]. Keys are
//! emitted in declaration order. With timings disabled the report depends
//! only on the inputs and the echoed configuration.

use logmosaic_core::affine::AffineMotion;
use logmosaic_core::mosaic::{CompositePolicy, FrameOutcome, FrameStatus, Mosaic};
use logmosaic_core::registration::{
    Diagnostics, InitReport, MatchRecord, RegistrationConfig, RegistrationError,
};
use serde::{Deserialize, Serialize};

pub const SCHEMA: &str = "logmosaic.report";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub version: u32,
    pub generator: String,
    pub config: RunConfig,
    pub summary: Summary,
    pub frames: Vec<FrameReport>,
}

/// Everything needed to rerun the mosaic and get the same output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub registration: RegistrationConfig,
    pub composite: CompositePolicy,
    pub inputs: Vec<String>,
    pub mask: Option<String>,
    pub min_ok: f64,
    pub timings: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub frames: usize,
    pub ok: usize,
    pub failed: usize,
    pub skipped: usize,
    pub canvas_width: usize,
    pub canvas_height: usize,
    /// First-frame position of canvas pixel (0, 0).
    pub canvas_origin: (i64, i64),
    pub covered_pixels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub index: usize,
    pub file: String,
    pub status: FrameStatus,
    pub reference: Option<usize>,
    pub init: Option<InitReport>,
    /// Motion from the reference frame to this frame.
    pub step: Option<AffineMotion>,
    /// Fit over the correlation-filtered matches, before residual filtering.
    pub stage1_step: Option<AffineMotion>,
    /// Motion from the first frame to this frame.
    pub chained: AffineMotion,
    pub diagnostics: Option<Diagnostics>,
    pub matches: Vec<MatchRecord>,
    pub error: Option<String>,
}

impl FrameReport {
    pub fn from_outcome(outcome: &FrameOutcome, file: String) -> Self {
        let mut report = FrameReport {
            index: outcome.index,
            file,
            status: outcome.status,
            reference: outcome.reference,
            init: None,
            step: outcome.step,
            stage1_step: None,
            chained: outcome.chained,
            diagnostics: None,
            matches: Vec::new(),
            error: None,
        };
        if let Some(res) = &outcome.registration {
            report.init = Some(res.init.clone());
            report.stage1_step = Some(res.stage1_motion);
            report.diagnostics = Some(res.diagnostics.clone());
            report.matches = res.matches.clone();
        } else if let Some(partial) = &outcome.partial {
            report.init = Some(partial.init.clone());
            report.diagnostics = Some(partial.diagnostics.clone());
            report.matches = partial.matches.clone();
        }
        report.error = match (&outcome.error, outcome.status) {
            (Some(RegistrationError::Failed { reason, .. }), _) => Some(reason.to_string()),
            (Some(e), _) => Some(e.to_string()),
            (None, FrameStatus::Skipped) => Some("chained motion could not be warped".into()),
            (None, _) => None,
        };
        report
    }
}

impl Report {
    pub fn new(config: RunConfig, mosaic: &Mosaic) -> Self {
        let count = |s| mosaic.frames.iter().filter(|f| f.status == s).count();
        let summary = Summary {
            frames: mosaic.frames.len(),
            ok: count(FrameStatus::Ok),
            failed: count(FrameStatus::Failed),
            skipped: count(FrameStatus::Skipped),
            canvas_width: mosaic.canvas.width(),
            canvas_height: mosaic.canvas.height(),
            canvas_origin: mosaic.canvas.origin(),
            covered_pixels: mosaic.canvas.covered_pixels(),
        };
        let frames = mosaic
            .frames
            .iter()
            .map(|f| {
                let file = config.inputs.get(f.index).cloned().unwrap_or_default();
                FrameReport::from_outcome(f, file)
            })
            .collect();
        Report {
            schema: SCHEMA.into(),
            version: SCHEMA_VERSION,
            generator: concat!("logmosaic ", env!("CARGO_PKG_VERSION")).into(),
            config,
            summary,
            frames,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report is serializable");
        s.push('\n');
        s
    }
}
