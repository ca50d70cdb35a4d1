//! Frame-to-frame image registration and mosaicking.
//!
//! Landmarks are matched between successive frames with a logarithmic
//! normalized-cross-correlation search, the matches are filtered in two
//! stages and fitted with a six-parameter affine displacement field, and the
//! registered frames are warped into a common mosaic.
//!
//! The crate is `no_std` (it needs `alloc`); file formats, the CLI and any
//! threading live in the `logmosaic` companion crate, which plugs into the
//! [`runtime::Runtime`] trait.
#![cfg_attr(not(test), no_std)]
// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod affine;
pub mod image;
pub mod kourogi;
pub mod matching;
pub mod mosaic;
pub mod registration;
pub mod runtime;
pub mod synth;
