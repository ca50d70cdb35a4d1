//! Normalized cross-correlation and logarithmic template search.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{Raster, ValidityMap};

/// Per-sample variance (luminance^2) at or below which a patch is flat and
/// its correlation undefined.
pub const FLAT_VARIANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SearchError {
    #[error("template half-extent must be at least 1")]
    InvalidTemplate,
    #[error("invalid search configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("reference template at ({x}, {y}) does not fit inside the image")]
    TemplateOutOfBounds { x: i64, y: i64 },
    #[error("reference template at ({x}, {y}) has zero variance")]
    FlatTemplate { x: i64, y: i64 },
    #[error("validity map was eroded for half-extent {map}, template uses {template}")]
    ValidityMismatch { map: usize, template: usize },
    #[error("no valid probe position around start ({x}, {y})")]
    NoValidStart { x: i64, y: i64 },
    #[error("search ended at ({x}, {y}) without a defined correlation")]
    Unscorable { x: i64, y: i64 },
    #[error("search exceeded {max_probes} probes")]
    Diverged { max_probes: usize },
}

/// Square template of side `2 * half_extent + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct TemplateSpec {
    half_extent: usize,
}

impl TemplateSpec {
    pub fn new(half_extent: usize) -> Result<Self, SearchError> {
        if half_extent == 0 {
            return Err(SearchError::InvalidTemplate);
        }
        Ok(Self { half_extent })
    }

    #[inline]
    pub fn half_extent(&self) -> usize {
        self.half_extent
    }

    #[inline]
    pub fn side(&self) -> usize {
        2 * self.half_extent + 1
    }
}

impl Default for TemplateSpec {
    fn default() -> Self {
        Self { half_extent: 7 }
    }
}

impl TryFrom<usize> for TemplateSpec {
    type Error = SearchError;
    fn try_from(h: usize) -> Result<Self, Self::Error> {
        Self::new(h)
    }
}

impl From<TemplateSpec> for usize {
    fn from(t: TemplateSpec) -> usize {
        t.half_extent
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Neighborhood {
    /// Centre plus the four arm ends.
    #[default]
    Cross5,
    /// Centre plus the eight surrounding positions at distance `w`.
    Square9,
}

impl Neighborhood {
    pub fn points(self) -> usize {
        match self {
            Neighborhood::Cross5 => 5,
            Neighborhood::Square9 => 9,
        }
    }

    // Offsets in tie-break order; the centre comes first.
    fn offsets(self) -> &'static [(i64, i64)] {
        const OFFSETS: [(i64, i64); 9] = [
            (0, 0),
            (1, 0),
            (0, 1),
            (-1, 0),
            (0, -1),
            (1, 1),
            (-1, 1),
            (-1, -1),
            (1, -1),
        ];
        &OFFSETS[..self.points()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Initial arm length; a power of two.
    pub w_init: u32,
    pub neighborhood: Neighborhood,
    /// Hard cap on correlation evaluations per search.
    pub max_probes: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            w_init: 16,
            neighborhood: Neighborhood::Cross5,
            max_probes: 512,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        if self.w_init < 2 || !self.w_init.is_power_of_two() {
            return Err(SearchError::InvalidConfig(
                "w_init must be a power of two >= 2",
            ));
        }
        let rings = self.w_init.trailing_zeros() as usize + 1;
        if self.max_probes < self.neighborhood.points() * rings {
            return Err(SearchError::InvalidConfig(
                "max_probes is below one ring per halving",
            ));
        }
        Ok(())
    }

    /// Upper bound on probes for a search that shifted `shifts` times:
    /// `k (ld(w_init) + S) + k` with `k` points per ring, the trailing term
    /// paying for the final `w = 1` ring.
    pub fn probe_bound(&self, shifts: usize) -> usize {
        let k = self.neighborhood.points();
        k * (self.w_init.trailing_zeros() as usize + shifts) + k
    }
}

/// Outcome of a template search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// Matched centre in the object image.
    pub u: i64,
    pub v: i64,
    pub score: f64,
    /// Correlation evaluations performed.
    pub probes: usize,
    /// Number of times the cross was relocated.
    pub shifts: usize,
}

/// Correlation coefficient of two equally shaped patches, or `None` when
/// either patch has zero variance.
pub fn ncc(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len(), "patches must have the same shape");
    assert!(a.len() >= 2, "patches need at least two samples");
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut num, mut sa, mut sb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        num += dx * dy;
        sa += dx * dx;
        sb += dy * dy;
    }
    if sa <= n * FLAT_VARIANCE || sb <= n * FLAT_VARIANCE {
        return None;
    }
    Some((num / libm::sqrt(sa * sb)).clamp(-1.0, 1.0))
}

/// Mean-free reference template, ready to be correlated at many positions.
#[derive(Debug, Clone)]
pub struct PreparedTemplate {
    half: usize,
    centered: Vec<f64>,
    norm: f64,
}

impl PreparedTemplate {
    pub fn extract(
        reference: &Raster,
        x: i64,
        y: i64,
        spec: TemplateSpec,
    ) -> Result<Self, SearchError> {
        let h = spec.half_extent() as i64;
        if x < h || y < h || x + h >= reference.width() as i64 || y + h >= reference.height() as i64
        {
            return Err(SearchError::TemplateOutOfBounds { x, y });
        }
        let mut values = Vec::with_capacity(spec.side() * spec.side());
        for yy in (y - h)..=(y + h) {
            let row = reference.row(yy as usize);
            values.extend_from_slice(&row[(x - h) as usize..=(x + h) as usize]);
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let mut ss = 0.0;
        for v in &mut values {
            *v -= mean;
            ss += *v * *v;
        }
        if ss <= n * FLAT_VARIANCE {
            return Err(SearchError::FlatTemplate { x, y });
        }
        Ok(Self {
            half: spec.half_extent(),
            centered: values,
            norm: libm::sqrt(ss),
        })
    }

    pub fn half_extent(&self) -> usize {
        self.half
    }

    /// Correlation with the object patch centred at `(x, y)`. The caller
    /// guarantees the footprint is in bounds (normally via a validity map).
    pub fn score_at(&self, object: &Raster, x: i64, y: i64) -> Option<f64> {
        let h = self.half as i64;
        let side = 2 * self.half + 1;
        let x0 = (x - h) as usize;
        let mut sum = 0.0;
        for yy in (y - h)..=(y + h) {
            sum += object.row(yy as usize)[x0..x0 + side].iter().sum::<f64>();
        }
        let n = self.centered.len() as f64;
        let mean = sum / n;
        let (mut num, mut ss) = (0.0, 0.0);
        let mut a = self.centered.chunks_exact(side);
        for yy in (y - h)..=(y + h) {
            let brow = &object.row(yy as usize)[x0..x0 + side];
            let arow = a.next().unwrap_or_default();
            for (&av, &bv) in arow.iter().zip(brow) {
                let d = bv - mean;
                num += av * d;
                ss += d * d;
            }
        }
        if ss <= n * FLAT_VARIANCE {
            return None;
        }
        Some((num / (self.norm * libm::sqrt(ss))).clamp(-1.0, 1.0))
    }
}

/// Logarithmic search for the reference template at `landmark`, starting at
/// `landmark + start_displacement` (rounded) in `object`.
///
/// Positions not valid in `valid` are skipped and never read.
pub fn log_search(
    reference: &Raster,
    object: &Raster,
    landmark: (i64, i64),
    start_displacement: (f64, f64),
    template: TemplateSpec,
    config: &SearchConfig,
    valid: &ValidityMap,
) -> Result<MatchResult, SearchError> {
    let prepared = PreparedTemplate::extract(reference, landmark.0, landmark.1, template)?;
    let start = (
        landmark.0 + libm::round(start_displacement.0) as i64,
        landmark.1 + libm::round(start_displacement.1) as i64,
    );
    log_search_prepared(&prepared, object, start, config, valid)
}

/// [`log_search`] with an already extracted template and integer start.
pub fn log_search_prepared(
    template: &PreparedTemplate,
    object: &Raster,
    start: (i64, i64),
    config: &SearchConfig,
    valid: &ValidityMap,
) -> Result<MatchResult, SearchError> {
    config.validate()?;
    if valid.half_extent() != template.half_extent() {
        return Err(SearchError::ValidityMismatch {
            map: valid.half_extent(),
            template: template.half_extent(),
        });
    }

    let mut memo: Vec<((i64, i64), Option<f64>)> = Vec::new();
    let mut probes = 0usize;
    let mut shifts = 0usize;
    let mut center = start;
    let mut w = i64::from(config.w_init);
    let mut first_ring = true;

    loop {
        let mut best = center;
        let mut best_score: Option<f64> = None;
        let mut any_valid = false;
        for &(dx, dy) in config.neighborhood.offsets() {
            let p = (center.0 + dx * w, center.1 + dy * w);
            if !valid.is_valid(p.0, p.1) {
                continue;
            }
            any_valid = true;
            let score = match memo.iter().find(|(q, _)| *q == p) {
                Some(&(_, s)) => s,
                None => {
                    probes += 1;
                    if probes > config.max_probes {
                        return Err(SearchError::Diverged {
                            max_probes: config.max_probes,
                        });
                    }
                    let s = template.score_at(object, p.0, p.1);
                    memo.push((p, s));
                    s
                }
            };
            // Strict improvement only: the centre and earlier probes win ties.
            if let Some(s) = score {
                if best_score.is_none_or(|b| s > b) {
                    best = p;
                    best_score = Some(s);
                }
            }
        }
        if first_ring && !any_valid {
            return Err(SearchError::NoValidStart {
                x: start.0,
                y: start.1,
            });
        }
        first_ring = false;

        if best == center {
            if w == 1 {
                break;
            }
            w /= 2;
        } else {
            center = best;
            shifts += 1;
        }
    }

    let score = memo
        .iter()
        .find(|(q, _)| *q == center)
        .and_then(|&(_, s)| s)
        .ok_or(SearchError::Unscorable {
            x: center.0,
            y: center.1,
        })?;
    Ok(MatchResult {
        u: center.0,
        v: center.1,
        score,
        probes,
        shifts,
    })
}
