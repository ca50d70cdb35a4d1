//! Six-parameter affine displacement fields.
//!
//! A motion `a = (a1..a6)` is a *displacement* field
//! `u(x, y) = a1 x + a2 y + a3`, `v(x, y) = a4 x + a5 y + a6`; the position
//! map it induces is `P(x, y) = (x + u, y + v)`. Composition and inversion
//! act on position maps.

use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest admissible `|det|` of the position map's linear part.
pub const SINGULAR_DET: f64 = 1e-8;

// Hadamard ratio det(G) / prod(diag(G)) of the normal matrix below which a
// sample layout is treated as collinear.
const DEGENERATE_RATIO: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("least-squares fit needs at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("sample positions are collinear or otherwise degenerate")]
    DegenerateGeometry,
    #[error("fitted parameters are not finite")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("position map is singular (det = {det:e})")]
pub struct SingularTransform {
    pub det: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("affine parameters must be finite")]
pub struct NonFiniteParameters;

/// Affine displacement field, stored as `[a1, a2, a3, a4, a5, a6]`.
///
/// Serializes as that JSON array.
#[derive(Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "[f64; 6]", into = "[f64; 6]")]
pub struct AffineMotion {
    params: [f64; 6],
}

impl fmt::Debug for AffineMotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AffineMotion{:?}", self.params)
    }
}

impl TryFrom<[f64; 6]> for AffineMotion {
    type Error = NonFiniteParameters;

    fn try_from(params: [f64; 6]) -> Result<Self, Self::Error> {
        if params.iter().all(|p| p.is_finite()) {
            Ok(Self { params })
        } else {
            Err(NonFiniteParameters)
        }
    }
}

impl From<AffineMotion> for [f64; 6] {
    fn from(m: AffineMotion) -> Self {
        m.params
    }
}

impl AffineMotion {
    pub const ZERO: AffineMotion = AffineMotion { params: [0.0; 6] };

    pub fn new(params: [f64; 6]) -> Result<Self, NonFiniteParameters> {
        Self::try_from(params)
    }

    pub fn translation(u: f64, v: f64) -> Self {
        Self {
            params: [0.0, 0.0, u, 0.0, 0.0, v],
        }
    }

    #[inline]
    pub fn params(&self) -> [f64; 6] {
        self.params
    }

    pub fn is_translation(&self) -> bool {
        let [a1, a2, _, a4, a5, _] = self.params;
        a1 == 0.0 && a2 == 0.0 && a4 == 0.0 && a5 == 0.0
    }

    /// Displacement `(u_c, v_c)` at `(x, y)`.
    #[inline]
    pub fn evaluate(&self, x: f64, y: f64) -> (f64, f64) {
        let [a1, a2, a3, a4, a5, a6] = self.params;
        (a1 * x + a2 * y + a3, a4 * x + a5 * y + a6)
    }

    /// Image of `(x, y)` under the position map.
    #[inline]
    pub fn map_point(&self, x: f64, y: f64) -> (f64, f64) {
        let (u, v) = self.evaluate(x, y);
        (x + u, y + v)
    }

    /// Determinant of the position map's linear part.
    pub fn determinant(&self) -> f64 {
        let [a1, a2, _, a4, a5, _] = self.params;
        (1.0 + a1) * (1.0 + a5) - a2 * a4
    }

    pub fn is_invertible(&self) -> bool {
        libm::fabs(self.determinant()) > SINGULAR_DET
    }

    /// Motion whose position map is `second ∘ first`.
    pub fn compose(first: &AffineMotion, second: &AffineMotion) -> AffineMotion {
        let (m1, t1) = first.position_map();
        let (m2, t2) = second.position_map();
        let m = [
            [
                m2[0][0] * m1[0][0] + m2[0][1] * m1[1][0],
                m2[0][0] * m1[0][1] + m2[0][1] * m1[1][1],
            ],
            [
                m2[1][0] * m1[0][0] + m2[1][1] * m1[1][0],
                m2[1][0] * m1[0][1] + m2[1][1] * m1[1][1],
            ],
        ];
        let t = [
            m2[0][0] * t1[0] + m2[0][1] * t1[1] + t2[0],
            m2[1][0] * t1[0] + m2[1][1] * t1[1] + t2[1],
        ];
        Self::from_position_map(m, t)
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &AffineMotion) -> AffineMotion {
        Self::compose(self, next)
    }

    pub fn invert(&self) -> Result<AffineMotion, SingularTransform> {
        let det = self.determinant();
        if !(libm::fabs(det) > SINGULAR_DET) {
            return Err(SingularTransform { det });
        }
        let (m, t) = self.position_map();
        let inv = [
            [m[1][1] / det, -m[0][1] / det],
            [-m[1][0] / det, m[0][0] / det],
        ];
        let ti = [
            -(inv[0][0] * t[0] + inv[0][1] * t[1]),
            -(inv[1][0] * t[0] + inv[1][1] * t[1]),
        ];
        Ok(Self::from_position_map(inv, ti))
    }

    fn position_map(&self) -> ([[f64; 2]; 2], [f64; 2]) {
        let [a1, a2, a3, a4, a5, a6] = self.params;
        ([[1.0 + a1, a2], [a4, 1.0 + a5]], [a3, a6])
    }

    fn from_position_map(m: [[f64; 2]; 2], t: [f64; 2]) -> Self {
        Self {
            params: [m[0][0] - 1.0, m[0][1], t[0], m[1][0], m[1][1] - 1.0, t[1]],
        }
    }
}

/// Observed displacement `(u, v)` at reference position `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisplacementSample {
    pub x: f64,
    pub y: f64,
    pub u: f64,
    pub v: f64,
}

impl DisplacementSample {
    pub fn new(x: f64, y: f64, u: f64, v: f64) -> Self {
        Self { x, y, u, v }
    }
}

/// Least-squares affine fit of displacement samples.
///
/// The u- and v-equations share one 3x3 Gram matrix and are solved as two
/// independent normal-equation systems.
pub fn fit_affine_lsq(samples: &[DisplacementSample]) -> Result<AffineMotion, FitError> {
    if samples.len() < 3 {
        return Err(FitError::InsufficientData {
            needed: 3,
            got: samples.len(),
        });
    }
    let mut g = [[0.0f64; 3]; 3];
    let mut bu = [0.0f64; 3];
    let mut bv = [0.0f64; 3];
    for s in samples {
        let row = [s.x, s.y, 1.0];
        for i in 0..3 {
            for j in 0..3 {
                g[i][j] += row[i] * row[j];
            }
            bu[i] += row[i] * s.u;
            bv[i] += row[i] * s.v;
        }
    }

    let diag = g[0][0] * g[1][1] * g[2][2];
    if !(diag > 0.0) || !(det3(&g) / diag > DEGENERATE_RATIO) {
        return Err(FitError::DegenerateGeometry);
    }
    let [a1, a2, a3] = solve3(g, bu).ok_or(FitError::DegenerateGeometry)?;
    let [a4, a5, a6] = solve3(g, bv).ok_or(FitError::DegenerateGeometry)?;
    AffineMotion::new([a1, a2, a3, a4, a5, a6]).map_err(|_| FitError::NonFinite)
}

/// Translation-only fit: the mean displacement.
pub fn fit_translation(samples: &[DisplacementSample]) -> Result<AffineMotion, FitError> {
    if samples.is_empty() {
        return Err(FitError::InsufficientData { needed: 1, got: 0 });
    }
    let n = samples.len() as f64;
    let (su, sv) = samples
        .iter()
        .fold((0.0, 0.0), |(su, sv), s| (su + s.u, sv + s.v));
    let (u, v) = (su / n, sv / n);
    if !(u.is_finite() && v.is_finite()) {
        return Err(FitError::NonFinite);
    }
    Ok(AffineMotion::translation(u, v))
}

/// Largest Euclidean distance between the positions `a` and `b` assign to the
/// four corners of a `width` x `height` frame.
pub fn corner_distance(a: &AffineMotion, b: &AffineMotion, width: usize, height: usize) -> f64 {
    let (xm, ym) = ((width.max(1) - 1) as f64, (height.max(1) - 1) as f64);
    [(0.0, 0.0), (xm, 0.0), (0.0, ym), (xm, ym)]
        .iter()
        .map(|&(x, y)| {
            let (ua, va) = a.evaluate(x, y);
            let (ub, vb) = b.evaluate(x, y);
            libm::hypot(ua - ub, va - vb)
        })
        .fold(0.0, f64::max)
}

/// Sum of squared residuals of `motion` against `samples`.
pub fn sum_squared_residuals(motion: &AffineMotion, samples: &[DisplacementSample]) -> f64 {
    samples
        .iter()
        .map(|s| {
            let (u, v) = motion.evaluate(s.x, s.y);
            (u - s.u) * (u - s.u) + (v - s.v) * (v - s.v)
        })
        .sum()
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

// Gaussian elimination with partial pivoting.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| {
            libm::fabs(a[i][col])
                .partial_cmp(&libm::fabs(a[j][col]))
                .unwrap_or(core::cmp::Ordering::Equal)
        })?;
        if a[pivot][col] == 0.0 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            let pivot_row = a[col];
            for (dst, src) in a[row][col..].iter_mut().zip(&pivot_row[col..]) {
                *dst -= f * src;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let mut acc = b[row];
        for k in row + 1..3 {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;
    use approx::assert_abs_diff_eq;

    fn assert_params_close(a: &AffineMotion, b: &AffineMotion, tol: f64) {
        for (p, q) in a.params().iter().zip(b.params().iter()) {
            assert!((p - q).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    fn samples_from(m: &AffineMotion, pts: &[(f64, f64)]) -> Vec<DisplacementSample> {
        pts.iter()
            .map(|&(x, y)| {
                let (u, v) = m.evaluate(x, y);
                DisplacementSample::new(x, y, u, v)
            })
            .collect()
    }

    #[test]
    fn evaluate_examples() {
        assert_eq!(AffineMotion::ZERO.evaluate(12.0, -3.0), (0.0, 0.0));
        let t = AffineMotion::new([0.0, 0.0, 5.0, 0.0, 0.0, -2.0]).unwrap();
        assert_eq!(t.evaluate(10.0, 10.0), (5.0, -2.0));
        let s = AffineMotion::new([0.1, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let (u, v) = s.evaluate(20.0, 7.0);
        assert_abs_diff_eq!(u, 2.0, epsilon = 1e-12);
        assert_eq!(v, 0.0);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(AffineMotion::new([0.0, f64::INFINITY, 0.0, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn fit_zero_and_translation() {
        let pts = [(0.0, 0.0), (10.0, 0.0), (0.0, 10.0), (7.0, 3.0)];
        let zero = fit_affine_lsq(&samples_from(&AffineMotion::ZERO, &pts)).unwrap();
        assert_params_close(&zero, &AffineMotion::ZERO, 1e-12);
        let t = AffineMotion::translation(5.0, -2.0);
        let fit = fit_affine_lsq(&samples_from(&t, &pts[..3])).unwrap();
        assert_params_close(&fit, &t, 1e-12);
    }

    #[test]
    fn fit_recovers_generating_model() {
        let truth = AffineMotion::new([0.02, 0.0, 3.0, 0.0, 0.02, -1.0]).unwrap();
        let pts: Vec<(f64, f64)> = (0..20)
            .map(|i| ((i * 37 % 200) as f64, (i * 53 % 150) as f64))
            .collect();
        let fit = fit_affine_lsq(&samples_from(&truth, &pts)).unwrap();
        assert_params_close(&fit, &truth, 1e-9);
    }

    #[test]
    fn fit_errors() {
        let s = DisplacementSample::new(1.0, 1.0, 0.0, 0.0);
        assert_eq!(
            fit_affine_lsq(&[s, s]),
            Err(FitError::InsufficientData { needed: 3, got: 2 })
        );
        let collinear: Vec<_> = (0..6)
            .map(|i| DisplacementSample::new(i as f64, 2.0 * i as f64 + 1.0, 1.0, 1.0))
            .collect();
        assert_eq!(
            fit_affine_lsq(&collinear),
            Err(FitError::DegenerateGeometry)
        );
        let vertical: Vec<_> = (0..4)
            .map(|i| DisplacementSample::new(0.0, i as f64, 1.0, 1.0))
            .collect();
        assert_eq!(fit_affine_lsq(&vertical), Err(FitError::DegenerateGeometry));
        assert!(fit_translation(&[]).is_err());
    }

    #[test]
    fn fit_conditioning_with_raw_coordinates() {
        // Tight cluster far from the origin, as produced by landmarks in a
        // small corner of a large frame.
        let truth = AffineMotion::new([0.01, -0.02, 4.0, 0.015, -0.005, -3.0]).unwrap();
        let pts: Vec<(f64, f64)> = (0..12)
            .map(|i| (700.0 + (i % 4) as f64 * 6.0, 550.0 + (i / 4) as f64 * 7.0))
            .collect();
        let fit = fit_affine_lsq(&samples_from(&truth, &pts)).unwrap();
        assert_params_close(&fit, &truth, 1e-9);
    }

    #[test]
    fn compose_examples() {
        let m = AffineMotion::new([0.05, -0.02, 3.0, 0.01, -0.04, 7.5]).unwrap();
        assert_params_close(&AffineMotion::compose(&AffineMotion::ZERO, &m), &m, 1e-15);
        let t = AffineMotion::compose(
            &AffineMotion::translation(3.0, 0.0),
            &AffineMotion::translation(0.0, 4.0),
        );
        assert_params_close(&t, &AffineMotion::translation(3.0, 4.0), 0.0);
        let id = AffineMotion::compose(&m, &m.invert().unwrap());
        assert_params_close(&id, &AffineMotion::ZERO, 1e-9);
    }

    #[test]
    fn compose_order_is_first_then_second() {
        let scale = AffineMotion::new([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        let shift = AffineMotion::translation(1.0, 0.0);
        // shift then double: (x + 1) * 2
        let (x, _) = AffineMotion::compose(&shift, &scale).map_point(3.0, 0.0);
        assert_eq!(x, 8.0);
        let (x, _) = AffineMotion::compose(&scale, &shift).map_point(3.0, 0.0);
        assert_eq!(x, 7.0);
    }

    #[test]
    fn invert_examples() {
        assert_params_close(
            &AffineMotion::ZERO.invert().unwrap(),
            &AffineMotion::ZERO,
            0.0,
        );
        assert_params_close(
            &AffineMotion::translation(5.0, -2.0).invert().unwrap(),
            &AffineMotion::translation(-5.0, 2.0),
            1e-15,
        );
        let s = AffineMotion::new([0.1, 0.0, 0.0, 0.0, 0.1, 0.0]).unwrap();
        let inv = s.invert().unwrap();
        let expected = -0.1 / 1.1;
        assert_abs_diff_eq!(inv.params()[0], expected, epsilon = 1e-15);
        assert_abs_diff_eq!(inv.params()[4], expected, epsilon = 1e-15);
        let singular = AffineMotion::new([-1.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(singular.invert().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn motion() -> impl Strategy<Value = AffineMotion> {
            (
                -0.3f64..0.3,
                -0.3f64..0.3,
                -50.0f64..50.0,
                -0.3f64..0.3,
                -0.3f64..0.3,
                -50.0f64..50.0,
            )
                .prop_map(|(a, b, c, d, e, f)| AffineMotion::new([a, b, c, d, e, f]).unwrap())
        }

        fn points(n: core::ops::Range<usize>) -> impl Strategy<Value = Vec<(f64, f64)>> {
            proptest::collection::vec((0.0f64..640.0, 0.0f64..480.0), n)
        }

        fn spread_ok(pts: &[(f64, f64)]) -> bool {
            // Exclude nearly collinear draws; area of the best triangle.
            let mut best = 0.0f64;
            for i in 0..pts.len() {
                for j in i + 1..pts.len() {
                    for k in j + 1..pts.len() {
                        let (a, b, c) = (pts[i], pts[j], pts[k]);
                        let area = ((b.0 - a.0) * (c.1 - a.1) - (c.0 - a.0) * (b.1 - a.1)).abs();
                        best = best.max(area);
                    }
                }
            }
            best > 2000.0
        }

        proptest! {
            #[test]
            fn exact_recovery(m in motion(), pts in points(3..50)) {
                prop_assume!(spread_ok(&pts));
                let fit = fit_affine_lsq(&samples_from(&m, &pts)).unwrap();
                for (p, q) in fit.params().iter().zip(m.params().iter()) {
                    prop_assert!((p - q).abs() < 1e-9, "{:?} vs {:?}", fit, m);
                }
            }

            #[test]
            fn three_points_interpolate(pts in points(3..4), obs in proptest::collection::vec(-20.0f64..20.0, 6)) {
                prop_assume!(spread_ok(&pts));
                let samples: Vec<_> = pts.iter().enumerate()
                    .map(|(i, &(x, y))| DisplacementSample::new(x, y, obs[2 * i], obs[2 * i + 1]))
                    .collect();
                let fit = fit_affine_lsq(&samples).unwrap();
                prop_assert!(sum_squared_residuals(&fit, &samples) < 1e-9);
            }

            #[test]
            fn fit_minimizes_residual(
                pts in points(5..30),
                noise in proptest::collection::vec(-3.0f64..3.0, 60),
                m in motion(),
                dirs in proptest::collection::vec(-1.0f64..1.0, 6),
            ) {
                prop_assume!(spread_ok(&pts));
                let samples: Vec<_> = pts.iter().enumerate().map(|(i, &(x, y))| {
                    let (u, v) = m.evaluate(x, y);
                    DisplacementSample::new(x, y, u + noise[2 * i], v + noise[2 * i + 1])
                }).collect();
                let fit = fit_affine_lsq(&samples).unwrap();
                let best = sum_squared_residuals(&fit, &samples);
                let scales = [1e-4, 1e-4, 1e-2, 1e-4, 1e-4, 1e-2];
                let mut p = fit.params();
                for k in 0..6 { p[k] += dirs[k] * scales[k]; }
                let other = AffineMotion::new(p).unwrap();
                prop_assert!(best <= sum_squared_residuals(&other, &samples) * (1.0 + 1e-12));
            }

            #[test]
            fn group_laws(a in motion(), b in motion(), c in motion()) {
                let left = AffineMotion::compose(&AffineMotion::compose(&a, &b), &c);
                let right = AffineMotion::compose(&a, &AffineMotion::compose(&b, &c));
                for (p, q) in left.params().iter().zip(right.params().iter()) {
                    prop_assert!((p - q).abs() < 1e-9);
                }
                let inv = a.invert().unwrap();
                for id in [AffineMotion::compose(&a, &inv), AffineMotion::compose(&inv, &a)] {
                    for p in id.params() {
                        prop_assert!(p.abs() < 1e-9);
                    }
                }
            }

            #[test]
            fn json_round_trip(m in motion()) {
                let s = serde_json::to_string(&m).unwrap();
                let back: AffineMotion = serde_json::from_str(&s).unwrap();
                prop_assert_eq!(back, m);
            }
        }
    }
}
