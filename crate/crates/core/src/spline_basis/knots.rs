use log::warn;
use serde::{Deserialize, Serialize};

use super::{KnotRule, SplineSpec};
use crate::error::{Error, Result};

/// Affine min–max map taking the covariate onto [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovariateMap {
    pub min: f64,
    pub max: f64,
}

impl CovariateMap {
    pub fn apply(&self, z: f64) -> f64 {
        (z - self.min) / (self.max - self.min)
    }

    pub fn invert(&self, t: f64) -> f64 {
        self.min + t * (self.max - self.min)
    }
}

/// Maps `values` onto [0, 1], returning the map so other values (e.g. the
/// sampled ones) can be transformed consistently.
pub fn normalize_covariate(values: &[f64]) -> Result<(Vec<f64>, CovariateMap)> {
    if values.is_empty() {
        return Err(Error::InvalidSpec("covariate has no values".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("covariate"));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max <= min {
        return Err(Error::DegenerateCovariate);
    }
    let map = CovariateMap { min, max };
    Ok((values.iter().map(|&z| map.apply(z)).collect(), map))
}

/// Interior knots strictly inside (0, 1); the boundary knots 0 and 1 are
/// implicit and repeated to the order's multiplicity in [`KnotVector::extended`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotVector {
    interior: Vec<f64>,
}

impl KnotVector {
    pub fn new(interior: Vec<f64>) -> Result<Self> {
        for w in interior.windows(2) {
            if !(w[0] < w[1]) {
                return Err(Error::InvalidSpec(
                    "interior knots must be strictly increasing".into(),
                ));
            }
        }
        if interior.iter().any(|&k| !(k > 0.0 && k < 1.0)) {
            return Err(Error::InvalidSpec(
                "interior knots must lie strictly inside (0, 1)".into(),
            ));
        }
        Ok(Self { interior })
    }

    pub fn equidistant(count: usize) -> Self {
        let step = (count + 1) as f64;
        Self {
            interior: (1..=count).map(|i| i as f64 / step).collect(),
        }
    }

    pub fn interior(&self) -> &[f64] {
        &self.interior
    }

    pub fn len(&self) -> usize {
        self.interior.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interior.is_empty()
    }

    /// Basis dimension for splines of the given order.
    pub fn dim(&self, order: usize) -> usize {
        self.interior.len() + order
    }

    /// Breakpoints 0, ξ_1, …, ξ_K, 1.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b = Vec::with_capacity(self.interior.len() + 2);
        b.push(0.0);
        b.extend_from_slice(&self.interior);
        b.push(1.0);
        b
    }

    /// Full knot sequence with 0 and 1 repeated `order` times; length q + m.
    pub fn extended(&self, order: usize) -> Vec<f64> {
        let mut t = Vec::with_capacity(self.interior.len() + 2 * order);
        t.extend(std::iter::repeat_n(0.0, order));
        t.extend_from_slice(&self.interior);
        t.extend(std::iter::repeat_n(1.0, order));
        t
    }

    /// Index of the knot interval containing `z`: intervals are
    /// [ξ_i, ξ_{i+1}) except the last, which is closed at 1.
    pub fn interval(&self, z: f64) -> usize {
        self.interior.partition_point(|&k| k <= z)
    }

    /// True when the knots sit at i/(K+1).
    pub fn is_equidistant(&self) -> bool {
        let step = (self.interior.len() + 1) as f64;
        self.interior
            .iter()
            .enumerate()
            .all(|(i, &k)| (k - (i + 1) as f64 / step).abs() < 1e-12)
    }
}

/// Type-1 (lower, no interpolation) empirical quantile of ascending data:
/// the smallest order statistic whose empirical CDF reaches `level`.
pub fn empirical_quantile(sorted: &[f64], level: f64) -> f64 {
    let n = sorted.len();
    // Guard against level·n landing a rounding error above an integer.
    let pos = (level * n as f64 - 1e-9).ceil() as usize;
    sorted[pos.clamp(1, n) - 1]
}

/// Places interior knots for `spec` using `reference` (values in [0, 1]) for
/// the quantile rules. Tied quantiles are collapsed, reducing K.
pub fn build_knots(spec: &SplineSpec, reference: &[f64]) -> Result<KnotVector> {
    let k = spec.interior_knots;
    if spec.knot_rule == KnotRule::Equidistant {
        return Ok(KnotVector::equidistant(k));
    }
    if reference.is_empty() {
        return Err(Error::InsufficientSupport {
            knots: k,
            distinct: 0,
        });
    }
    if reference.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("knot reference"));
    }
    let mut sorted = reference.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut distinct = 1;
    for w in sorted.windows(2) {
        if w[1] > w[0] {
            distinct += 1;
        }
    }
    if distinct < k + 1 {
        return Err(Error::InsufficientSupport { knots: k, distinct });
    }
    let mut interior: Vec<f64> = Vec::with_capacity(k);
    for i in 1..=k {
        let q = empirical_quantile(&sorted, i as f64 / (k + 1) as f64);
        if q > 0.0 && q < 1.0 && interior.last().is_none_or(|&last| q > last) {
            interior.push(q);
        }
    }
    if interior.len() < k {
        warn!(
            "collapsed tied quantile knots: requested K = {k}, using K = {}",
            interior.len()
        );
    }
    KnotVector::new(interior)
}
