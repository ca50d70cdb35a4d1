//! Synthetic frame sequences with known motion, and brute-force oracles.
//!
//! A sequence is rendered from one procedural "world" texture: frame `k`
//! shows the world through the inverse of the chained ground-truth motion,
//! so frame `k` relates to frame `k-1` exactly by the per-step motion (up to
//! bilinear resampling). Illumination changes are applied per frame on top.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::affine::{corner_distance, AffineMotion};
use crate::image::{Raster, RegionMask, ValidityMap};
use crate::matching::{MatchResult, PreparedTemplate, SearchError, TemplateSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Texture {
    /// Uniform noise smoothed by repeated box filtering.
    #[default]
    SmoothedNoise,
    /// Square cells of random gray level, blurred.
    CheckerBlurred,
    /// Sum of Gaussian blobs of random size and sign.
    BlobField,
}

/// Photometric change `I' = gain * I + offset + ramp`, where the ramp runs
/// linearly from `-ramp * mean` to `+ramp * mean` across the frame along
/// `ramp_angle` (radians, 0 = left to right) and `mean` is the frame mean
/// before the change.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Illumination {
    pub gain: f64,
    pub offset: f64,
    pub ramp: f64,
    pub ramp_angle: f64,
}

impl Default for Illumination {
    fn default() -> Self {
        Self {
            gain: 1.0,
            offset: 0.0,
            ramp: 0.0,
            ramp_angle: 0.0,
        }
    }
}

impl Illumination {
    pub fn is_identity(&self) -> bool {
        self.gain == 1.0 && self.offset == 0.0 && self.ramp == 0.0
    }

    pub fn apply(&self, frame: &Raster) -> Raster {
        let mean = frame.mean();
        let (c, s) = (libm::cos(self.ramp_angle), libm::sin(self.ramp_angle));
        let (w, h) = ((frame.width() - 1) as f64, (frame.height() - 1) as f64);
        let proj = |x: f64, y: f64| x * c + y * s;
        let corners = [proj(0.0, 0.0), proj(w, 0.0), proj(0.0, h), proj(w, h)];
        let lo = corners.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = corners.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        frame
            .map(|x, y, v| {
                let t = (proj(x as f64, y as f64) - lo) / span;
                self.gain * v + self.offset + self.ramp * mean * (2.0 * t - 1.0)
            })
            .expect("illumination of a finite frame stays finite")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskShape {
    #[default]
    Full,
    /// Centred disc with this radius in pixels.
    Circle(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub width: usize,
    pub height: usize,
    pub texture: Texture,
    /// Box filter width used by the textures (applied twice).
    pub smoothing: usize,
    pub seed: u64,
    /// Ground-truth motion from each frame to the next.
    pub step_motion: AffineMotion,
    /// Applied to every frame after the first.
    pub illumination: Illumination,
    pub frame_count: usize,
    pub mask: MaskShape,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            width: 160,
            height: 120,
            texture: Texture::SmoothedNoise,
            smoothing: 5,
            seed: 0,
            step_motion: AffineMotion::ZERO,
            illumination: Illumination::default(),
            frame_count: 2,
            mask: MaskShape::Full,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthFrame {
    pub image: Raster,
    pub mask: RegionMask,
    /// Motion from the previous frame to this one (zero for the first).
    pub step: AffineMotion,
    /// Motion from the first frame to this one.
    pub chained: AffineMotion,
}

/// Renders the sequence described by `spec`. Panics if the step motion is
/// not invertible or the spec has zero-sized dimensions.
pub fn generate_sequence(spec: &SynthSpec) -> Vec<SynthFrame> {
    assert!(spec.width >= 2 && spec.height >= 2 && spec.frame_count >= 1);
    let inverse_step = spec
        .step_motion
        .invert()
        .expect("step motion must be invertible");

    // chained[k]: first frame -> frame k; back[k]: frame k -> first frame.
    let mut chained = vec![AffineMotion::ZERO];
    let mut back = vec![AffineMotion::ZERO];
    for k in 1..spec.frame_count {
        chained.push(AffineMotion::compose(&chained[k - 1], &spec.step_motion));
        back.push(AffineMotion::compose(&inverse_step, &back[k - 1]));
    }

    // World extent in first-frame coordinates covering every frame.
    let (wm, hm) = ((spec.width - 1) as f64, (spec.height - 1) as f64);
    let (mut x0, mut y0, mut x1, mut y1) = (0.0f64, 0.0f64, wm, hm);
    for b in &back {
        for (cx, cy) in [(0.0, 0.0), (wm, 0.0), (0.0, hm), (wm, hm)] {
            let (px, py) = b.map_point(cx, cy);
            x0 = x0.min(px);
            y0 = y0.min(py);
            x1 = x1.max(px);
            y1 = y1.max(py);
        }
    }
    let ox = libm::floor(x0) - 2.0;
    let oy = libm::floor(y0) - 2.0;
    let ww = (libm::ceil(x1) - ox) as usize + 3;
    let wh = (libm::ceil(y1) - oy) as usize + 3;
    let world = render_texture(spec.texture, ww, wh, spec.smoothing, spec.seed);

    let mask = match spec.mask {
        MaskShape::Full => RegionMask::full(spec.width, spec.height),
        MaskShape::Circle(r) => RegionMask::circle(spec.width, spec.height, r),
    }
    .expect("mask dimensions checked above");

    (0..spec.frame_count)
        .map(|k| {
            let b = back[k];
            let base = Raster::from_fn(spec.width, spec.height, |x, y| {
                let (px, py) = b.map_point(x as f64, y as f64);
                world
                    .sample_bilinear(px - ox, py - oy)
                    .expect("world covers every frame")
            })
            .expect("world samples are finite");
            let image = if k == 0 || spec.illumination.is_identity() {
                base
            } else {
                spec.illumination.apply(&base)
            };
            SynthFrame {
                image,
                mask: mask.clone(),
                step: if k == 0 {
                    AffineMotion::ZERO
                } else {
                    spec.step_motion
                },
                chained: chained[k],
            }
        })
        .collect()
}

/// Procedural texture with mean 128 and standard deviation 40 (before
/// clamping to `0..=255`).
pub fn render_texture(
    texture: Texture,
    width: usize,
    height: usize,
    smoothing: usize,
    seed: u64,
) -> Raster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pad = 2 * smoothing;
    let (pw, ph) = (width + 2 * pad, height + 2 * pad);
    let mut field: Vec<f64> = match texture {
        Texture::SmoothedNoise => (0..pw * ph).map(|_| rng.random_range(0.0..255.0)).collect(),
        Texture::CheckerBlurred => {
            let cell = (3 * smoothing).max(4);
            let cols = pw.div_ceil(cell);
            let levels: Vec<f64> = (0..cols * ph.div_ceil(cell))
                .map(|_| rng.random_range(0.0..255.0))
                .collect();
            (0..pw * ph)
                .map(|i| levels[(i / pw / cell) * cols + (i % pw) / cell])
                .collect()
        }
        Texture::BlobField => {
            let mut f = vec![0.0; pw * ph];
            let blobs = (pw * ph / 150).max(1);
            for _ in 0..blobs {
                let cx = rng.random_range(0.0..pw as f64);
                let cy = rng.random_range(0.0..ph as f64);
                let sigma: f64 = rng.random_range(2.0..7.0);
                let amp = rng.random_range(-1.0..1.0);
                let reach = libm::ceil(3.0 * sigma) as i64;
                for y in (cy as i64 - reach).max(0)..(cy as i64 + reach).min(ph as i64) {
                    for x in (cx as i64 - reach).max(0)..(cx as i64 + reach).min(pw as i64) {
                        let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                        f[y as usize * pw + x as usize] +=
                            amp * libm::exp(-d2 / (2.0 * sigma * sigma));
                    }
                }
            }
            f
        }
    };
    if smoothing > 1 {
        for _ in 0..2 {
            field = box_blur(&field, pw, ph, smoothing);
        }
    }
    let mut cropped = Vec::with_capacity(width * height);
    for y in pad..pad + height {
        cropped.extend_from_slice(&field[y * pw + pad..y * pw + pad + width]);
    }
    let n = cropped.len() as f64;
    let mean = cropped.iter().sum::<f64>() / n;
    let sd = libm::sqrt(cropped.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n);
    let scale = if sd > 0.0 { 40.0 / sd } else { 0.0 };
    for v in &mut cropped {
        *v = (128.0 + (*v - mean) * scale).clamp(0.0, 255.0);
    }
    Raster::new(width, height, cropped).expect("texture samples are finite")
}

// Separable box filter of width `k`, edges clamped.
fn box_blur(src: &[f64], w: usize, h: usize, k: usize) -> Vec<f64> {
    let r = (k / 2) as i64;
    let norm = 1.0 / (2 * r + 1) as f64;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for d in -r..=r {
                let xx = (x as i64 + d).clamp(0, w as i64 - 1) as usize;
                acc += src[y * w + xx];
            }
            tmp[y * w + x] = acc * norm;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for d in -r..=r {
                let yy = (y as i64 + d).clamp(0, h as i64 - 1) as usize;
                acc += tmp[yy * w + x];
            }
            out[y * w + x] = acc * norm;
        }
    }
    out
}

/// Correlation scores over the square window of Chebyshev radius `radius`
/// around `center`; `None` where the position is invalid or the patch flat.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationSurface {
    pub center: (i64, i64),
    pub radius: i64,
    pub scores: Vec<Option<f64>>,
    /// Number of correlations evaluated.
    pub probes: usize,
}

impl CorrelationSurface {
    pub fn compute(
        template: &PreparedTemplate,
        object: &Raster,
        center: (i64, i64),
        radius: i64,
        valid: &ValidityMap,
    ) -> Self {
        let side = (2 * radius + 1) as usize;
        let mut scores = Vec::with_capacity(side * side);
        let mut probes = 0;
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                let (x, y) = (center.0 + dx, center.1 + dy);
                if valid.is_valid(x, y) {
                    probes += 1;
                    scores.push(template.score_at(object, x, y));
                } else {
                    scores.push(None);
                }
            }
        }
        Self {
            center,
            radius,
            scores,
            probes,
        }
    }

    fn side(&self) -> i64 {
        2 * self.radius + 1
    }

    pub fn get(&self, x: i64, y: i64) -> Option<f64> {
        let (dx, dy) = (x - self.center.0, y - self.center.1);
        if dx.abs() > self.radius || dy.abs() > self.radius {
            return None;
        }
        self.scores[((dy + self.radius) * self.side() + dx + self.radius) as usize]
    }

    /// Best position: strict maximum, the window centre first and then
    /// row-major order breaking ties.
    pub fn argmax(&self) -> Option<((i64, i64), f64)> {
        let mut best = self
            .get(self.center.0, self.center.1)
            .map(|s| (self.center, s));
        for (i, s) in self.scores.iter().enumerate() {
            let Some(s) = *s else { continue };
            let i = i as i64;
            let p = (
                self.center.0 + i % self.side() - self.radius,
                self.center.1 + i / self.side() - self.radius,
            );
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((p, s));
            }
        }
        best
    }

    /// Positions whose score is at least that of every scored 4-neighbour.
    pub fn local_maxima(&self) -> Vec<(i64, i64)> {
        let mut out = Vec::new();
        for y in self.center.1 - self.radius..=self.center.1 + self.radius {
            for x in self.center.0 - self.radius..=self.center.0 + self.radius {
                let Some(s) = self.get(x, y) else { continue };
                let is_max = [(1, 0), (-1, 0), (0, 1), (0, -1)]
                    .iter()
                    .all(|&(dx, dy)| self.get(x + dx, y + dy).is_none_or(|n| s >= n));
                if is_max {
                    out.push((x, y));
                }
            }
        }
        out
    }

    /// Exactly one local maximum under 4-connectivity.
    pub fn is_unimodal(&self) -> bool {
        self.local_maxima().len() == 1
    }
}

/// Naive template search: the correlation maximum over every valid position
/// within Chebyshev radius `window_radius` of `landmark + start`.
#[allow(clippy::too_many_arguments)]
pub fn exhaustive_match(
    reference: &Raster,
    object: &Raster,
    landmark: (i64, i64),
    start_displacement: (i64, i64),
    template: TemplateSpec,
    window_radius: i64,
    valid: &ValidityMap,
) -> Result<MatchResult, SearchError> {
    let prepared = PreparedTemplate::extract(reference, landmark.0, landmark.1, template)?;
    let center = (
        landmark.0 + start_displacement.0,
        landmark.1 + start_displacement.1,
    );
    let surface = CorrelationSurface::compute(&prepared, object, center, window_radius, valid);
    if surface.probes == 0 {
        return Err(SearchError::NoValidStart {
            x: center.0,
            y: center.1,
        });
    }
    let ((u, v), score) = surface.argmax().ok_or(SearchError::Unscorable {
        x: center.0,
        y: center.1,
    })?;
    Ok(MatchResult {
        u,
        v,
        score,
        probes: surface.probes,
        shifts: 0,
    })
}

/// Largest distance between estimated and true mapped positions over the
/// four frame corners.
pub fn corner_error(
    estimated: &AffineMotion,
    truth: &AffineMotion,
    width: usize,
    height: usize,
) -> f64 {
    corner_distance(estimated, truth, width, height)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::erode_for_template;
    use approx::assert_abs_diff_eq;

    #[test]
    fn identity_sequence_frames_are_identical() {
        let spec = SynthSpec {
            frame_count: 4,
            ..SynthSpec::default()
        };
        let frames = generate_sequence(&spec);
        for f in &frames[1..] {
            assert_eq!(f.image, frames[0].image);
        }
    }

    #[test]
    fn translation_is_definitional() {
        let spec = SynthSpec {
            step_motion: AffineMotion::translation(5.0, 0.0),
            frame_count: 2,
            ..SynthSpec::default()
        };
        let f = generate_sequence(&spec);
        for y in 0..spec.height {
            for x in 5..spec.width {
                let expected = f[0]
                    .image
                    .sample_bilinear(x as f64 - 5.0, y as f64)
                    .unwrap();
                assert_abs_diff_eq!(f[1].image.get(x, y), expected, epsilon = 1e-9);
            }
        }
        assert_eq!(f[1].chained, AffineMotion::translation(5.0, 0.0));
    }

    #[test]
    fn ramp_splits_halves_by_ramp_times_mean() {
        let spec = SynthSpec {
            illumination: Illumination {
                ramp: 0.2,
                ..Illumination::default()
            },
            ..SynthSpec::default()
        };
        let f = generate_sequence(&spec);
        let half_mean = |img: &Raster, left: bool| {
            let (mut s, mut n) = (0.0, 0.0);
            for y in 0..img.height() {
                for x in 0..img.width() {
                    if (x < img.width() / 2) == left {
                        s += img.get(x, y);
                        n += 1.0;
                    }
                }
            }
            s / n
        };
        let base_diff = half_mean(&f[0].image, false) - half_mean(&f[0].image, true);
        let diff = half_mean(&f[1].image, false) - half_mean(&f[1].image, true);
        let mean = f[0].image.mean();
        // The ramp contributes 0.2 * mean up to the discretisation of the
        // halves; the texture itself contributes base_diff.
        assert!(((diff - base_diff) - 0.2 * mean).abs() < 0.01 * 0.2 * mean);
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SynthSpec {
            texture: Texture::BlobField,
            step_motion: AffineMotion::new([0.01, 0.0, 2.5, 0.0, -0.01, 1.0]).unwrap(),
            frame_count: 3,
            seed: 77,
            ..SynthSpec::default()
        };
        assert_eq!(generate_sequence(&spec), generate_sequence(&spec));
        let other = SynthSpec { seed: 78, ..spec };
        assert_ne!(
            generate_sequence(&spec)[0].image,
            generate_sequence(&other)[0].image
        );
    }

    #[test]
    fn textures_have_requested_statistics() {
        for t in [
            Texture::SmoothedNoise,
            Texture::CheckerBlurred,
            Texture::BlobField,
        ] {
            let r = render_texture(t, 120, 90, 5, 3);
            let mean = r.mean();
            assert!((mean - 128.0).abs() < 2.0, "{t:?} mean {mean}");
            let spec = TemplateSpec::default();
            for y in (10..80).step_by(17) {
                for x in (10..110).step_by(23) {
                    assert!(PreparedTemplate::extract(&r, x, y, spec).is_ok());
                }
            }
        }
    }

    #[test]
    fn exhaustive_examples() {
        let spec = SynthSpec {
            step_motion: AffineMotion::translation(6.0, -4.0),
            ..SynthSpec::default()
        };
        let f = generate_sequence(&spec);
        let tpl = TemplateSpec::new(7).unwrap();
        let valid = erode_for_template(&f[1].mask, 7);
        let same =
            exhaustive_match(&f[0].image, &f[0].image, (80, 60), (0, 0), tpl, 8, &valid).unwrap();
        assert_eq!((same.u, same.v), (80, 60));
        assert_abs_diff_eq!(same.score, 1.0, epsilon = 1e-12);
        assert_eq!(same.probes, 17 * 17);
        let m =
            exhaustive_match(&f[0].image, &f[1].image, (80, 60), (0, 0), tpl, 8, &valid).unwrap();
        assert_eq!((m.u, m.v), (86, 56));
        // Window partly outside the validity map: only valid positions count.
        let edge =
            exhaustive_match(&f[0].image, &f[0].image, (10, 10), (0, 0), tpl, 8, &valid).unwrap();
        assert_eq!(edge.probes, 12 * 12);
    }

    #[test]
    fn unimodality_check() {
        let surface = CorrelationSurface {
            center: (0, 0),
            radius: 1,
            scores: vec![
                Some(0.1),
                Some(0.2),
                Some(0.1),
                Some(0.2),
                Some(0.9),
                Some(0.3),
                None,
                Some(0.2),
                Some(0.1),
            ],
            probes: 8,
        };
        assert!(surface.is_unimodal());
        assert_eq!(surface.argmax(), Some(((0, 0), 0.9)));
        let two = CorrelationSurface {
            scores: vec![
                Some(0.8),
                Some(0.2),
                Some(0.1),
                Some(0.2),
                Some(0.9),
                Some(0.3),
                None,
                Some(0.2),
                Some(0.1),
            ],
            ..surface.clone()
        };
        assert!(!two.is_unimodal());
        let plateau = CorrelationSurface {
            scores: vec![
                Some(0.1),
                Some(0.2),
                Some(0.1),
                Some(0.2),
                Some(0.9),
                Some(0.9),
                None,
                Some(0.2),
                Some(0.1),
            ],
            ..surface
        };
        assert!(!plateau.is_unimodal());
        assert_eq!(plateau.argmax(), Some(((0, 0), 0.9)));
    }

    #[test]
    fn corner_error_examples() {
        let truth = AffineMotion::new([0.01, 0.02, 3.0, -0.01, 0.0, 1.0]).unwrap();
        assert_eq!(corner_error(&truth, &truth, 100, 80), 0.0);
        let shifted = AffineMotion::compose(&truth, &AffineMotion::translation(1.0, 0.0));
        assert_abs_diff_eq!(
            corner_error(&shifted, &truth, 100, 80),
            1.0,
            epsilon = 1e-12
        );
        let mut p = truth.params();
        p[0] += 0.01;
        let scaled = AffineMotion::new(p).unwrap();
        assert_abs_diff_eq!(
            corner_error(&scaled, &truth, 100, 80),
            0.99,
            epsilon = 1e-12
        );
    }
}
