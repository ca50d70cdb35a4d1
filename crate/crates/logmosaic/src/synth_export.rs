//! Synthetic sequences on disk: numbered PGM frames, the shared mask and a
//! JSON sidecar with the ground-truth motions.

use std::fs;
use std::path::{Path, PathBuf};

use logmosaic_core::affine::AffineMotion;
use logmosaic_core::synth::{generate_sequence, SynthSpec};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{self, IoError};

pub const TRUTH_SCHEMA: &str = "logmosaic.truth";
pub const TRUTH_FILE: &str = "truth.json";
pub const MASK_FILE: &str = "mask.pgm";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFrame {
    pub index: usize,
    pub file: String,
    /// Motion from the previous frame to this one.
    pub step: AffineMotion,
    /// Motion from the first frame to this one.
    pub chained: AffineMotion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub schema: String,
    pub spec: SynthSpec,
    pub frames: Vec<TruthFrame>,
}

#[derive(Debug, Error)]
pub enum TruthError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{path}: not a ground-truth file (schema {found:?})")]
    Schema { path: PathBuf, found: String },
}

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:04}.pgm")
}

/// Renders `spec` and writes it into `dir`, which is created if needed.
/// The spec must have an invertible step motion and at least 2x2 frames.
pub fn export_sequence(dir: &Path, spec: &SynthSpec) -> Result<Truth, IoError> {
    fs::create_dir_all(dir).map_err(|source| IoError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let frames = generate_sequence(spec);
    let mut truth = Truth {
        schema: TRUTH_SCHEMA.into(),
        spec: *spec,
        frames: Vec::with_capacity(frames.len()),
    };
    for (index, frame) in frames.iter().enumerate() {
        let file = frame_file_name(index);
        io::write_image(&dir.join(&file), &frame.image)?;
        truth.frames.push(TruthFrame {
            index,
            file,
            step: frame.step,
            chained: frame.chained,
        });
    }
    if let Some(first) = frames.first() {
        io::write_mask(&dir.join(MASK_FILE), &first.mask)?;
    }
    let path = dir.join(TRUTH_FILE);
    let json = serde_json::to_string_pretty(&truth).expect("truth is serializable");
    fs::write(&path, json + "\n").map_err(|source| IoError::Io { path, source })?;
    Ok(truth)
}

pub fn read_truth(path: &Path) -> Result<Truth, TruthError> {
    let text = fs::read_to_string(path).map_err(|source| TruthError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let truth: Truth = serde_json::from_str(&text).map_err(|source| TruthError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    if truth.schema != TRUTH_SCHEMA {
        return Err(TruthError::Schema {
            path: path.to_path_buf(),
            found: truth.schema,
        });
    }
    Ok(truth)
}
