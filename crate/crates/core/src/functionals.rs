//! Plug-in functionals evaluated on a weighted point-mass measure.
//!
//! A [`WeightedMeasure`] places mass `w_k` at `y_k`. Masses come from any
//! weight family and may be negative; no functional clamps or monotonizes the
//! resulting distribution function. The CDF uses the weak inequality
//! `y_k ≤ y` throughout.

use serde::{Deserialize, Serialize};

use crate::calibration_weights::WeightSet;
use crate::error::{Error, Result};

/// Point masses `(y_k, w_k)`, optionally paired with a second variable `x_k`
/// for ratio-type functionals.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedMeasure {
    values: Vec<f64>,
    masses: Vec<f64>,
    denominator: Option<Vec<f64>>,
}

impl WeightedMeasure {
    pub fn new(values: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        if values.len() != masses.len() {
            return Err(Error::LengthMismatch {
                expected: values.len(),
                got: masses.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("measure values"));
        }
        if masses.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("measure masses"));
        }
        Ok(Self {
            values,
            masses,
            denominator: None,
        })
    }

    /// Unit masses: the census measure of a population.
    pub fn unit(values: Vec<f64>) -> Result<Self> {
        let masses = vec![1.0; values.len()];
        Self::new(values, masses)
    }

    pub fn from_weights(weights: &WeightSet, values_on_sample: &[f64]) -> Result<Self> {
        Self::new(values_on_sample.to_vec(), weights.weights().to_vec())
    }

    /// Pairs each atom with `x_k`, the denominator variable of a ratio.
    pub fn with_denominator(mut self, x: Vec<f64>) -> Result<Self> {
        if x.len() != self.values.len() {
            return Err(Error::LengthMismatch {
                expected: self.values.len(),
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("denominator values"));
        }
        self.denominator = Some(x);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn denominator(&self) -> Option<&[f64]> {
        self.denominator.as_deref()
    }

    /// N̂ = Σ w_k.
    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// The same atoms with every mass multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.masses.iter_mut().for_each(|w| *w *= factor);
        out
    }

    /// Adds `epsilon` of mass at the atom of unit `k`, i.e. `M + ε δ_{y_k}`.
    pub fn perturbed(&self, k: usize, epsilon: f64) -> Result<Self> {
        if k >= self.len() {
            return Err(Error::UnknownUnit(k));
        }
        let mut out = self.clone();
        out.masses[k] += epsilon;
        Ok(out)
    }

    fn nonzero_mass(&self, what: &'static str) -> Result<f64> {
        let n = self.total_mass();
        if n == 0.0 {
            Err(Error::ZeroDenominator(what))
        } else {
            Ok(n)
        }
    }

    /// Unit indices in ascending order of value.
    fn ascending(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.values[a].total_cmp(&self.values[b]));
        order
    }

    /// Σ_{j: y_j ≤ y_k} w_j for every atom, ties sharing their full mass.
    fn cumulative_masses(&self) -> Vec<f64> {
        let order = self.ascending();
        let mut cum = vec![0.0; self.len()];
        let mut running = 0.0;
        let mut start = 0;
        while start < order.len() {
            let value = self.values[order[start]];
            let mut end = start;
            while end < order.len() && self.values[order[end]] == value {
                running += self.masses[order[end]];
                end += 1;
            }
            for &k in &order[start..end] {
                cum[k] = running;
            }
            start = end;
        }
        cum
    }

    /// F̂(y_k) for every atom.
    pub fn cdf_at_atoms(&self) -> Result<Vec<f64>> {
        let n = self.nonzero_mass("total mass")?;
        Ok(self
            .cumulative_masses()
            .into_iter()
            .map(|c| c / n)
            .collect())
    }
}

/// Scalar parameter kinds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Functional {
    Total,
    Mean,
    Ratio,
    Gini,
    Quantile {
        level: f64,
    },
    PovertyRate {
        fraction: f64,
        level: f64,
        #[serde(default)]
        strict: bool,
    },
}

impl Functional {
    /// Standard low-income proportion: share at or below 60% of the median.
    pub fn poverty_rate() -> Self {
        Functional::PovertyRate {
            fraction: 0.6,
            level: 0.5,
            strict: false,
        }
    }

    /// Homogeneity degree in the masses: T(cM) = c^degree T(M).
    pub fn degree(&self) -> u32 {
        match self {
            Functional::Total => 1,
            _ => 0,
        }
    }

    pub fn name(&self) -> String {
        match self {
            Functional::Total => "total".into(),
            Functional::Mean => "mean".into(),
            Functional::Ratio => "ratio".into(),
            Functional::Gini => "gini".into(),
            Functional::Quantile { level } => format!("quantile({level})"),
            Functional::PovertyRate { .. } => "poverty_rate".into(),
        }
    }

    pub fn evaluate(&self, measure: &WeightedMeasure) -> Result<f64> {
        match *self {
            Functional::Total => Ok(total(measure)),
            Functional::Mean => mean(measure),
            Functional::Ratio => paired_ratio(measure),
            Functional::Gini => gini(measure),
            Functional::Quantile { level } => quantile(measure, level),
            Functional::PovertyRate {
                fraction,
                level,
                strict,
            } => poverty_rate(measure, fraction, level, strict),
        }
    }
}

impl std::str::FromStr for Functional {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        if let Some(rest) = lower.strip_prefix("quantile") {
            let level = rest.trim_matches(|c| c == '(' || c == ')' || c == ':' || c == '=');
            let level = if level.is_empty() {
                0.5
            } else {
                level
                    .parse()
                    .map_err(|_| Error::InvalidSpec(format!("bad quantile level in '{s}'")))?
            };
            return Ok(Functional::Quantile { level });
        }
        match lower.replace('-', "_").as_str() {
            "total" => Ok(Functional::Total),
            "mean" => Ok(Functional::Mean),
            "ratio" => Ok(Functional::Ratio),
            "gini" => Ok(Functional::Gini),
            "median" => Ok(Functional::Quantile { level: 0.5 }),
            "poverty" | "poverty_rate" | "low_income" => Ok(Functional::poverty_rate()),
            other => Err(Error::InvalidSpec(format!("unknown parameter '{other}'"))),
        }
    }
}

/// Σ w_k y_k.
pub fn total(measure: &WeightedMeasure) -> f64 {
    measure
        .values
        .iter()
        .zip(&measure.masses)
        .map(|(y, w)| w * y)
        .sum()
}

/// Σ w_k y_k / N̂.
pub fn mean(measure: &WeightedMeasure) -> Result<f64> {
    let n = measure.nonzero_mass("total mass")?;
    Ok(total(measure) / n)
}

/// Σ w y / Σ w x for two measures sharing their masses.
pub fn ratio(numerator: &WeightedMeasure, denominator: &WeightedMeasure) -> Result<f64> {
    if numerator.masses != denominator.masses {
        return Err(Error::InvalidSpec(
            "ratio measures must share their weights".into(),
        ));
    }
    let bottom = total(denominator);
    if bottom == 0.0 {
        return Err(Error::ZeroDenominator("weighted total of x"));
    }
    Ok(total(numerator) / bottom)
}

fn paired_ratio(measure: &WeightedMeasure) -> Result<f64> {
    let x = measure
        .denominator()
        .ok_or_else(|| Error::InvalidSpec("ratio needs a denominator variable".into()))?;
    let bottom: f64 = x.iter().zip(&measure.masses).map(|(x, w)| w * x).sum();
    if bottom == 0.0 {
        return Err(Error::ZeroDenominator("weighted total of x"));
    }
    Ok(total(measure) / bottom)
}

/// F̂(y) = Σ_{y_k ≤ y} w_k / N̂.
pub fn cdf_value(measure: &WeightedMeasure, y: f64) -> Result<f64> {
    let n = measure.nonzero_mass("total mass")?;
    let below: f64 = measure
        .values
        .iter()
        .zip(&measure.masses)
        .filter(|(v, _)| **v <= y)
        .map(|(_, w)| w)
        .sum();
    Ok(below / n)
}

fn strict_cdf_value(measure: &WeightedMeasure, y: f64) -> Result<f64> {
    let n = measure.nonzero_mass("total mass")?;
    let below: f64 = measure
        .values
        .iter()
        .zip(&measure.masses)
        .filter(|(v, _)| **v < y)
        .map(|(_, w)| w)
        .sum();
    Ok(below / n)
}

/// Smallest support point whose CDF reaches `level`, scanning upward and
/// taking the first crossing when masses are signed.
pub fn quantile(measure: &WeightedMeasure, level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidSpec(format!(
            "quantile level {level} outside (0, 1)"
        )));
    }
    let n = measure.total_mass();
    if !(n > 0.0) {
        return Err(Error::ZeroDenominator("quantile needs positive total mass"));
    }
    // A relative slack of 1e-12 keeps F = 0.3 from missing level 0.3 by one ulp.
    let target = level - 1e-12;
    let order = measure.ascending();
    let mut running = 0.0;
    let mut i = 0;
    while i < order.len() {
        let value = measure.values[order[i]];
        while i < order.len() && measure.values[order[i]] == value {
            running += measure.masses[order[i]];
            i += 1;
        }
        if running / n >= target {
            return Ok(value);
        }
    }
    Err(Error::QuantileUndefined)
}

/// G = Σ w_k (2F̂(y_k) − 1) y_k / Σ w_k y_k.
pub fn gini(measure: &WeightedMeasure) -> Result<f64> {
    let t = total(measure);
    if t == 0.0 {
        return Err(Error::ZeroDenominator("weighted total of y"));
    }
    let cdf = measure.cdf_at_atoms()?;
    let top: f64 = measure
        .values
        .iter()
        .zip(&measure.masses)
        .zip(&cdf)
        .map(|((y, w), f)| w * ((2.0 * f - 1.0) * y))
        .sum();
    Ok(top / t)
}

/// Share of mass at or below `fraction` times the `level` quantile; `strict`
/// switches the comparison to `<`.
pub fn poverty_rate(
    measure: &WeightedMeasure,
    fraction: f64,
    level: f64,
    strict: bool,
) -> Result<f64> {
    let threshold = fraction * quantile(measure, level)?;
    if strict {
        strict_cdf_value(measure, threshold)
    } else {
        cdf_value(measure, threshold)
    }
}

/// Root of `Σ w_k φ(y_k, Φ) = 0` inside `bracket` by bisection, followed by
/// a secant polish; accurate to 1e-10 in Φ. When several roots lie in the
/// bracket, the one bisection converges to is returned.
pub fn implicit_solve<F>(measure: &WeightedMeasure, phi: F, bracket: (f64, f64)) -> Result<f64>
where
    F: Fn(f64, f64) -> f64,
{
    const TOLERANCE: f64 = 1e-10;
    let g = |theta: f64| -> f64 {
        measure
            .values
            .iter()
            .zip(&measure.masses)
            .map(|(y, w)| w * phi(*y, theta))
            .sum()
    };
    let (mut lo, mut hi) = if bracket.0 <= bracket.1 {
        bracket
    } else {
        (bracket.1, bracket.0)
    };
    let (mut g_lo, mut g_hi) = (g(lo), g(hi));
    if g_lo == 0.0 {
        return Ok(lo);
    }
    if g_hi == 0.0 {
        return Ok(hi);
    }
    if g_lo.signum() == g_hi.signum() || !g_lo.is_finite() || !g_hi.is_finite() {
        return Err(Error::RootNotBracketed);
    }
    for _ in 0..200 {
        if hi - lo <= TOLERANCE {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let g_mid = g(mid);
        if g_mid == 0.0 {
            return Ok(mid);
        }
        if g_mid.signum() == g_lo.signum() {
            lo = mid;
            g_lo = g_mid;
        } else {
            hi = mid;
            g_hi = g_mid;
        }
    }
    let mid = 0.5 * (lo + hi);
    let secant = hi - g_hi * (hi - lo) / (g_hi - g_lo);
    if secant.is_finite() && secant >= lo && secant <= hi && g(secant).abs() < g(mid).abs() {
        Ok(secant)
    } else {
        Ok(mid)
    }
}
