//! Frame, mask and mosaic files.
//!
//! PGM is handled here directly (binary `P5`, 8 or 16 bit). PNG goes through
//! the `image` crate; colour is reduced to BT.601 luma on load.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageFormat};
use logmosaic_core::image::{ImageError, Raster, RegionMask};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: malformed PGM: {msg}")]
    Pgm { path: PathBuf, msg: String },
    #[error("{path}: {source}")]
    Decode {
        path: PathBuf,
        source: image::ImageError,
    },
    #[error("{path}: unsupported file type (expected .pgm or .png)")]
    UnsupportedFormat { path: PathBuf },
    #[error("{path}: {source}")]
    Image { path: PathBuf, source: ImageError },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileKind {
    Pgm,
    Png,
}

impl FileKind {
    pub fn from_path(path: &Path) -> Option<Self> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "pgm" => Some(FileKind::Pgm),
            "png" => Some(FileKind::Png),
            _ => None,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Loads a frame as luminance. The file type is taken from the extension.
pub fn read_frame(path: &Path) -> Result<Raster, IoError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    match FileKind::from_path(path) {
        Some(FileKind::Pgm) => decode_pgm(&bytes).map_err(|msg| IoError::Pgm {
            path: path.to_path_buf(),
            msg,
        }),
        Some(FileKind::Png) => decode_png(&bytes, path),
        None => Err(IoError::UnsupportedFormat {
            path: path.to_path_buf(),
        }),
    }
}

/// Loads a mask image; any sample above zero is valid.
pub fn read_mask(path: &Path) -> Result<RegionMask, IoError> {
    let raster = read_frame(path)?;
    let valid = raster.samples().iter().map(|&v| v > 0.0).collect();
    RegionMask::new(raster.width(), raster.height(), valid).map_err(|source| IoError::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes a raster, rounding and clamping samples to 8 bits.
pub fn write_image(path: &Path, raster: &Raster) -> Result<(), IoError> {
    let bytes = to_u8(raster);
    write_gray8(path, raster.width(), raster.height(), &bytes)
}

/// Writes a mask as 0/255.
pub fn write_mask(path: &Path, mask: &RegionMask) -> Result<(), IoError> {
    let bytes: Vec<u8> = mask
        .as_slice()
        .iter()
        .map(|&v| if v { 255 } else { 0 })
        .collect();
    write_gray8(path, mask.width(), mask.height(), &bytes)
}

pub fn to_u8(raster: &Raster) -> Vec<u8> {
    raster
        .samples()
        .iter()
        .map(|&v| v.round().clamp(0.0, 255.0) as u8)
        .collect()
}

fn write_gray8(path: &Path, width: usize, height: usize, bytes: &[u8]) -> Result<(), IoError> {
    match FileKind::from_path(path) {
        Some(FileKind::Pgm) => {
            let mut out = Vec::with_capacity(bytes.len() + 20);
            write!(out, "P5\n{width} {height}\n255\n").map_err(io_err(path))?;
            out.extend_from_slice(bytes);
            fs::write(path, out).map_err(io_err(path))
        }
        Some(FileKind::Png) => {
            let img = image::GrayImage::from_raw(width as u32, height as u32, bytes.to_vec())
                .expect("buffer length matches dimensions");
            img.save_with_format(path, ImageFormat::Png)
                .map_err(|source| IoError::Decode {
                    path: path.to_path_buf(),
                    source,
                })
        }
        None => Err(IoError::UnsupportedFormat {
            path: path.to_path_buf(),
        }),
    }
}

/// Decodes a binary PGM. Samples keep their 8-bit values; 16-bit files and
/// files with another maxval are rescaled to `0..=255`.
pub fn decode_pgm(bytes: &[u8]) -> Result<Raster, String> {
    let mut pos = 0;
    let magic = next_token(bytes, &mut pos).ok_or("missing magic number")?;
    if magic != b"P5" {
        return Err(format!(
            "unsupported magic {:?} (only binary P5)",
            String::from_utf8_lossy(magic)
        ));
    }
    let mut field = |name: &str| -> Result<usize, String> {
        let tok = next_token(bytes, &mut pos).ok_or_else(|| format!("missing {name}"))?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format!("bad {name} {:?}", String::from_utf8_lossy(tok)))
    };
    let width = field("width")?;
    let height = field("height")?;
    let maxval = field("maxval")?;
    if width == 0 || height == 0 {
        return Err(format!("empty image {width}x{height}"));
    }
    if !(1..=65535).contains(&maxval) {
        return Err(format!("maxval {maxval} out of range"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let n = width
        .checked_mul(height)
        .ok_or("image dimensions overflow")?;
    let depth = if maxval < 256 { 1 } else { 2 };
    let len = n.checked_mul(depth).ok_or("image dimensions overflow")?;
    let data = bytes
        .get(pos..)
        .filter(|d| d.len() >= len)
        .ok_or_else(|| format!("truncated raster: expected {len} bytes"))?;

    let scale = 255.0 / maxval as f64;
    let samples: Vec<f64> = if depth == 1 {
        if maxval == 255 {
            data[..n].iter().map(|&b| b as f64).collect()
        } else {
            data[..n].iter().map(|&b| b as f64 * scale).collect()
        }
    } else {
        data[..2 * n]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 * scale)
            .collect()
    };
    Raster::new(width, height, samples).map_err(|e| e.to_string())
}

// Next whitespace-delimited header token, skipping `#` comments.
fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if bytes.get(*pos) == Some(&b'#') {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (*pos > start).then(|| &bytes[start..*pos])
}

fn decode_png(bytes: &[u8], path: &Path) -> Result<Raster, IoError> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(|source| {
        IoError::Decode {
            path: path.to_path_buf(),
            source,
        }
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let samples: Vec<f64> = match img {
        DynamicImage::ImageLuma8(g) => g.into_raw().into_iter().map(f64::from).collect(),
        DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageLuma16(_)
        | DynamicImage::ImageLumaA16(_) => img
            .to_luma32f()
            .into_raw()
            .into_iter()
            .map(|v| v as f64 * 255.0)
            .collect(),
        // The image crate's own luma conversion uses different weights.
        other => other
            .to_rgb32f()
            .pixels()
            .map(|p| 255.0 * (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64))
            .collect(),
    };
    Raster::new(w, h, samples).map_err(|source| IoError::Image {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_comments_and_whitespace() {
        let mut bytes = b"P5 # comment\n# another\n 3\t2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 10, 20, 30, 40, 255]);
        let r = decode_pgm(&bytes).unwrap();
        assert_eq!((r.width(), r.height()), (3, 2));
        assert_eq!(r.samples(), &[0.0, 10.0, 20.0, 30.0, 40.0, 255.0]);
    }

    #[test]
    fn sixteen_bit_is_rescaled() {
        let mut bytes = b"P5\n2 1\n65535\n".to_vec();
        bytes.extend_from_slice(&[0xff, 0xff, 0x00, 0x00]);
        let r = decode_pgm(&bytes).unwrap();
        assert_eq!(r.samples(), &[255.0, 0.0]);
    }

    #[test]
    fn malformed_headers_are_errors() {
        for bad in [
            &b""[..],
            b"P6\n1 1\n255\n\0\0\0",
            b"P5\n0 1\n255\n",
            b"P5\n2 2\n255\n\0",
            b"P5\nx 2\n255\n",
            b"P5\n1 1\n70000\n\0\0",
        ] {
            assert!(
                decode_pgm(bad).is_err(),
                "{:?}",
                String::from_utf8_lossy(bad)
            );
        }
    }

    #[test]
    fn rounding_and_clamping_on_export() {
        let r = Raster::new(4, 1, vec![-3.0, 0.49, 127.5, 300.0]).unwrap();
        assert_eq!(to_u8(&r), vec![0, 0, 128, 255]);
    }
}
