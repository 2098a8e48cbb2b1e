//! Linearized variables (influence functions) of the plug-in functionals,
//! a finite-difference oracle, and spline residuals of linearized values.
//!
//! Each analytic routine evaluates the influence function at the measure it
//! is given: on a population measure with unit masses this yields the
//! population `u_k`; on a weighted sample measure it yields `û_k` with every
//! embedded parameter estimated by those weights.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::calibration_weights::{Covariate, WeightFamily, WeightSet};
use crate::error::{Error, Result};
use crate::functionals::{gini, mean, quantile, total, Functional, WeightedMeasure};
use crate::sampling_designs::SampleDraw;
use crate::spline_basis::SplineSpec;

/// Per-unit linearized values of one functional.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedVariables {
    pub values: Vec<f64>,
    pub functional: Functional,
    /// True when the formula comes from outside the core estimator theory
    /// (the low-income proportion and quantile).
    pub external_formula: bool,
}

impl LinearizedVariables {
    fn exact(functional: Functional, values: Vec<f64>) -> Self {
        Self {
            values,
            functional,
            external_formula: false,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Bandwidth choice for the kernel density in density-dependent
/// linearizations.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "value")]
pub enum BandwidthRule {
    /// 0.9 · min(σ̂, IQR/1.34) · n^{-1/5}.
    #[default]
    Silverman,
    Fixed(f64),
}

/// Fewest atoms for which a kernel density is attempted.
pub const MIN_DENSITY_SAMPLE: usize = 10;

/// Densities below this at the quantile are treated as zero.
pub const DENSITY_FLOOR: f64 = 1e-12;

/// Bandwidth under `rule` for the weighted measure.
pub fn bandwidth(measure: &WeightedMeasure, rule: BandwidthRule) -> Result<f64> {
    let n = measure.len();
    if n < MIN_DENSITY_SAMPLE {
        return Err(Error::TooFewForDensity {
            needed: MIN_DENSITY_SAMPLE,
            got: n,
        });
    }
    match rule {
        BandwidthRule::Fixed(h) if h > 0.0 && h.is_finite() => Ok(h),
        BandwidthRule::Fixed(h) => Err(Error::InvalidSpec(format!(
            "bandwidth {h} must be positive"
        ))),
        BandwidthRule::Silverman => {
            let mu = mean(measure)?;
            let big_n = measure.total_mass();
            let var = measure
                .values()
                .iter()
                .zip(measure.masses())
                .map(|(y, w)| w * (y - mu).powi(2))
                .sum::<f64>()
                / big_n;
            let sd = var.max(0.0).sqrt();
            let iqr = quantile(measure, 0.75)? - quantile(measure, 0.25)?;
            let spread = match (sd > 0.0, iqr > 0.0) {
                (true, true) => sd.min(iqr / 1.34),
                (true, false) => sd,
                (false, true) => iqr / 1.34,
                (false, false) => return Err(Error::DensityTooSmall),
            };
            Ok(0.9 * spread * (n as f64).powf(-0.2))
        }
    }
}

/// Gaussian-kernel density of the weighted measure at `at`.
pub fn kernel_density(measure: &WeightedMeasure, at: f64, bandwidth: f64) -> Result<f64> {
    let n = measure.total_mass();
    if n == 0.0 {
        return Err(Error::ZeroDenominator("total mass"));
    }
    let norm = 1.0 / (2.0 * PI).sqrt();
    let sum: f64 = measure
        .values()
        .iter()
        .zip(measure.masses())
        .map(|(y, w)| {
            let t = (at - y) / bandwidth;
            w * norm * (-0.5 * t * t).exp()
        })
        .sum();
    Ok(sum / (n * bandwidth))
}

/// u_k = y_k.
pub fn linearized_total(values: &[f64]) -> LinearizedVariables {
    LinearizedVariables::exact(Functional::Total, values.to_vec())
}

/// u_k = (y_k − ȳ)/N̂.
pub fn linearized_mean(measure: &WeightedMeasure) -> Result<LinearizedVariables> {
    let mu = mean(measure)?;
    let n = measure.total_mass();
    let values = measure.values().iter().map(|y| (y - mu) / n).collect();
    Ok(LinearizedVariables::exact(Functional::Mean, values))
}

/// u_k = (y_k − R̂ x_k)/t̂_x on a measure carrying the denominator variable.
pub fn linearized_ratio(measure: &WeightedMeasure) -> Result<LinearizedVariables> {
    let x = measure
        .denominator()
        .ok_or_else(|| Error::InvalidSpec("ratio needs a denominator variable".into()))?;
    let tx: f64 = x.iter().zip(measure.masses()).map(|(x, w)| w * x).sum();
    if tx == 0.0 {
        return Err(Error::ZeroDenominator("weighted total of x"));
    }
    let r = total(measure) / tx;
    let values = measure
        .values()
        .iter()
        .zip(x)
        .map(|(y, x)| (y - r * x) / tx)
        .collect();
    Ok(LinearizedVariables::exact(Functional::Ratio, values))
}

/// u_k = [2F̂(y_k) y_k − 2 Σ_{y_j<y_k} w_j y_j / N̂ − y_k(1 + Ĝ)]/t̂_y + (1 − Ĝ)/N̂.
///
/// The partial sum runs over values strictly below y_k while F̂ is weak;
/// together they reproduce the derivative of the plug-in Gini exactly,
/// including at tied values.
pub fn linearized_gini(measure: &WeightedMeasure) -> Result<LinearizedVariables> {
    if measure.len() < 2 {
        return Err(Error::GiniSingleAtom);
    }
    let g = gini(measure)?;
    let t = total(measure);
    let n = measure.total_mass();
    let y = measure.values();
    let w = measure.masses();
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]));
    let mut values = vec![0.0; y.len()];
    let (mut mass_below, mut sum_below) = (0.0, 0.0);
    let mut start = 0;
    while start < order.len() {
        let level = y[order[start]];
        let mut end = start;
        let (mut tie_mass, mut tie_sum) = (0.0, 0.0);
        while end < order.len() && y[order[end]] == level {
            tie_mass += w[order[end]];
            tie_sum += w[order[end]] * level;
            end += 1;
        }
        let cdf = (mass_below + tie_mass) / n;
        let u = (2.0 * cdf * level - 2.0 * sum_below / n - level * (1.0 + g)) / t + (1.0 - g) / n;
        for &k in &order[start..end] {
            values[k] = u;
        }
        mass_below += tie_mass;
        sum_below += tie_sum;
        start = end;
    }
    Ok(LinearizedVariables::exact(Functional::Gini, values))
}

/// u_k = −(1{y_k ≤ q̂} − α)/(N̂ f̂(q̂)).
pub fn linearized_quantile(
    measure: &WeightedMeasure,
    level: f64,
    rule: BandwidthRule,
) -> Result<LinearizedVariables> {
    let q = quantile(measure, level)?;
    let h = bandwidth(measure, rule)?;
    let f_q = kernel_density(measure, q, h)?;
    if !(f_q >= DENSITY_FLOOR) {
        return Err(Error::DensityTooSmall);
    }
    let n = measure.total_mass();
    let values = measure
        .values()
        .iter()
        .map(|&y| -(indicator(y <= q) - level) / (n * f_q))
        .collect();
    Ok(LinearizedVariables {
        values,
        functional: Functional::Quantile { level },
        external_formula: true,
    })
}

/// û_k = [1{y_k ≤ t̂} − P̂ − β (f̂(t̂)/f̂(q̂)) (1{y_k ≤ q̂} − α)]/N̂ with
/// q̂ the α-quantile, t̂ = β q̂ and f̂ a Gaussian kernel density.
pub fn linearized_poverty_rate(
    measure: &WeightedMeasure,
    fraction: f64,
    level: f64,
    strict: bool,
    rule: BandwidthRule,
) -> Result<LinearizedVariables> {
    let q = quantile(measure, level)?;
    let threshold = fraction * q;
    let h = bandwidth(measure, rule)?;
    let f_q = kernel_density(measure, q, h)?;
    if !(f_q >= DENSITY_FLOOR) {
        return Err(Error::DensityTooSmall);
    }
    let f_t = kernel_density(measure, threshold, h)?;
    let below = |y: f64| {
        if strict {
            y < threshold
        } else {
            y <= threshold
        }
    };
    let n = measure.total_mass();
    let rate = measure
        .values()
        .iter()
        .zip(measure.masses())
        .filter(|(y, _)| below(**y))
        .map(|(_, w)| w)
        .sum::<f64>()
        / n;
    let slope = fraction * f_t / f_q;
    let values = measure
        .values()
        .iter()
        .map(|&y| (indicator(below(y)) - rate - slope * (indicator(y <= q) - level)) / n)
        .collect();
    Ok(LinearizedVariables {
        values,
        functional: Functional::PovertyRate {
            fraction,
            level,
            strict,
        },
        external_formula: true,
    })
}

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Analytic linearized variable of any supported functional.
pub fn linearize(
    functional: &Functional,
    measure: &WeightedMeasure,
    rule: BandwidthRule,
) -> Result<LinearizedVariables> {
    match *functional {
        Functional::Total => Ok(linearized_total(measure.values())),
        Functional::Mean => linearized_mean(measure),
        Functional::Ratio => linearized_ratio(measure),
        Functional::Gini => linearized_gini(measure),
        Functional::Quantile { level } => linearized_quantile(measure, level, rule),
        Functional::PovertyRate {
            fraction,
            level,
            strict,
        } => linearized_poverty_rate(measure, fraction, level, strict, rule),
    }
}

/// Oracle step 1e-6 · max(1, N̂).
pub fn default_epsilon(measure: &WeightedMeasure) -> f64 {
    1e-6 * measure.total_mass().abs().max(1.0)
}

/// [T(M + ε δ_{y_k}) − T(M)]/ε, by literally adding mass ε at atom `k`.
pub fn influence_oracle(
    functional: &Functional,
    measure: &WeightedMeasure,
    k: usize,
    epsilon: f64,
) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidSpec("oracle step must be positive".into()));
    }
    let base = functional.evaluate(measure)?;
    let bumped = functional.evaluate(&measure.perturbed(k, epsilon)?)?;
    Ok((bumped - base) / epsilon)
}

/// Richardson combination 2·D(ε/2) − D(ε) of the one-sided oracle.
pub fn influence_oracle_richardson(
    functional: &Functional,
    measure: &WeightedMeasure,
    k: usize,
    epsilon: f64,
) -> Result<f64> {
    let coarse = influence_oracle(functional, measure, k, epsilon)?;
    let fine = influence_oracle(functional, measure, k, 0.5 * epsilon)?;
    Ok(2.0 * fine - coarse)
}

/// Fitted values and residuals of linearized values under a working model.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualFit {
    pub fitted: Vec<f64>,
    pub residuals: Vec<f64>,
    pub family: WeightFamily,
}

impl ResidualFit {
    /// Fit under the working model of `weights`; HT weights fit zero.
    pub fn from_weights(weights: &WeightSet, linearized: &[f64]) -> Result<Self> {
        let fitted = weights.fitted(linearized)?;
        let residuals = linearized.iter().zip(&fitted).map(|(u, g)| u - g).collect();
        Ok(Self {
            fitted,
            residuals,
            family: weights.family(),
        })
    }
}

/// Residuals of û against the design-weighted spline fit on z.
pub fn residual_fit(
    draw: &SampleDraw,
    covariate: &Covariate,
    spec: &SplineSpec,
    linearized: &[f64],
) -> Result<ResidualFit> {
    let (theta, model) =
        crate::calibration_weights::fit_coefficients(draw, covariate, spec, linearized)?;
    let fitted = model.fitted_on_sample(&theta);
    let residuals = linearized.iter().zip(&fitted).map(|(u, g)| u - g).collect();
    Ok(ResidualFit {
        fitted,
        residuals,
        family: WeightFamily::BSpline { spec: *spec },
    })
}

/// Census fit g̃ of population-level u on z, with knots from the population.
pub fn census_fit(
    covariate: &Covariate,
    spec: &SplineSpec,
    population_u: &[f64],
) -> Result<ResidualFit> {
    let census = SampleDraw::census(covariate.len());
    residual_fit(&census, covariate, spec, population_u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration_weights::{bspline_weights, ht_weights};
    use crate::sampling_designs::{draw_srswor, Population};
    use crate::spline_basis::KnotRule;
    use proptest::prelude::*;

    fn rel_max(a: &[f64], b: &[f64]) -> f64 {
        let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
            / scale.max(f64::MIN_POSITIVE)
    }

    fn oracle_all(f: &Functional, m: &WeightedMeasure) -> Vec<f64> {
        (0..m.len())
            .map(|k| influence_oracle(f, m, k, 1e-6).unwrap())
            .collect()
    }

    #[test]
    fn total_is_identity() {
        let u = linearized_total(&[1.0, 2.0, 3.0]);
        assert_eq!(u.values, vec![1.0, 2.0, 3.0]);
        assert_eq!(linearized_total(&[0.0; 2]).values, vec![0.0; 2]);
        let m = WeightedMeasure::unit(vec![1.0, 2.0, 3.0]).unwrap();
        for k in 0..3 {
            let o = influence_oracle(&Functional::Total, &m, k, 0.37).unwrap();
            assert!((o - m.values()[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn ratio_examples() {
        let m = WeightedMeasure::unit(vec![2.0, 4.0])
            .unwrap()
            .with_denominator(vec![1.0, 3.0])
            .unwrap();
        let u = linearized_ratio(&m).unwrap();
        assert!((u.values[0] - 0.125).abs() < 1e-15);
        assert!((u.values[1] + 0.125).abs() < 1e-15);
        assert!(u.values.iter().sum::<f64>().abs() < 1e-15);
        let o = influence_oracle(&Functional::Ratio, &m, 0, 1e-6).unwrap();
        assert!((o - 0.125).abs() < 1e-6 * 0.125);
        let same = WeightedMeasure::unit(vec![2.0, 5.0])
            .unwrap()
            .with_denominator(vec![2.0, 5.0])
            .unwrap();
        assert!(linearized_ratio(&same)
            .unwrap()
            .values
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn richardson_improves_ratio_oracle() {
        let m = WeightedMeasure::unit(vec![2.0, 4.0])
            .unwrap()
            .with_denominator(vec![1.0, 3.0])
            .unwrap();
        let eps = 1e-2;
        let plain = (influence_oracle(&Functional::Ratio, &m, 0, eps).unwrap() - 0.125).abs();
        let rich =
            (influence_oracle_richardson(&Functional::Ratio, &m, 0, eps).unwrap() - 0.125).abs();
        assert!(rich * 2.0 < plain, "{rich} vs {plain}");
    }

    #[test]
    fn gini_matches_oracle_on_example() {
        let m = WeightedMeasure::unit(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let u = linearized_gini(&m).unwrap();
        let o = oracle_all(&Functional::Gini, &m);
        assert!(rel_max(&u.values, &o) < 1e-4);
        let doubled = WeightedMeasure::unit(vec![2.0, 4.0, 6.0, 8.0]).unwrap();
        let u2 = linearized_gini(&doubled).unwrap();
        // Degree-0 in y: the influence function is unchanged by scaling y.
        assert!(rel_max(&u2.values, &u.values) < 1e-12);
        assert_eq!(
            linearized_gini(&WeightedMeasure::unit(vec![3.0]).unwrap()),
            Err(Error::GiniSingleAtom)
        );
    }

    #[test]
    fn gini_matches_oracle_with_ties_and_weights() {
        let m = WeightedMeasure::new(vec![1.0, 2.0, 2.0, 5.0, 3.0], vec![1.5, 2.0, 0.5, 1.0, 3.0])
            .unwrap();
        let u = linearized_gini(&m).unwrap();
        let o: Vec<f64> = (0..m.len())
            .map(|k| influence_oracle_richardson(&Functional::Gini, &m, k, 1e-4).unwrap())
            .collect();
        assert!(rel_max(&u.values, &o) < 1e-6);
    }

    fn wage_like(n: usize) -> WeightedMeasure {
        let y: Vec<f64> = (0..n)
            .map(|i| 1000.0 + 37.0 * ((i * 7919) % n) as f64 + (i as f64).sqrt())
            .collect();
        WeightedMeasure::unit(y).unwrap()
    }

    #[test]
    fn poverty_bound_and_finiteness() {
        let m = wage_like(200);
        let u = linearized_poverty_rate(&m, 0.6, 0.5, false, BandwidthRule::Silverman).unwrap();
        assert!(u.external_formula);
        let q = quantile(&m, 0.5).unwrap();
        let h = bandwidth(&m, BandwidthRule::Silverman).unwrap();
        let ratio = kernel_density(&m, 0.6 * q, h).unwrap() / kernel_density(&m, q, h).unwrap();
        let bound = (1.0 + 0.6 * ratio) / 200.0;
        assert!(u
            .values
            .iter()
            .all(|v| v.is_finite() && v.abs() <= bound + 1e-15));
        let few = WeightedMeasure::unit(vec![1.0; 5]).unwrap();
        assert!(matches!(
            linearized_poverty_rate(&few, 0.6, 0.5, false, BandwidthRule::Silverman),
            Err(Error::TooFewForDensity { .. })
        ));
    }

    #[test]
    fn poverty_with_empty_tail() {
        // Threshold below every value: P̂ = 0 and only the quantile term remains.
        let y: Vec<f64> = (0..50).map(|i| 100.0 + i as f64).collect();
        let m = WeightedMeasure::unit(y).unwrap();
        let u = linearized_poverty_rate(&m, 0.6, 0.5, false, BandwidthRule::Silverman).unwrap();
        let q = quantile(&m, 0.5).unwrap();
        let h = bandwidth(&m, BandwidthRule::Silverman).unwrap();
        let slope =
            0.6 * kernel_density(&m, 0.6 * q, h).unwrap() / kernel_density(&m, q, h).unwrap();
        for (&yk, uk) in m.values().iter().zip(&u.values) {
            let expected = -slope * (indicator(yk <= q) - 0.5) / 50.0;
            assert!((uk - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn kernel_density_integrates_to_one() {
        let m = wage_like(50);
        let h = bandwidth(&m, BandwidthRule::Silverman).unwrap();
        let (lo, hi) = (0.0, 4000.0);
        let steps = 20000;
        let dx = (hi - lo) / steps as f64;
        let area: f64 = (0..steps)
            .map(|i| kernel_density(&m, lo + (i as f64 + 0.5) * dx, h).unwrap() * dx)
            .sum();
        assert!((area - 1.0).abs() < 1e-6);
    }

    fn toy() -> (Population, Covariate) {
        let z: Vec<f64> = (0..120)
            .map(|i| ((i * 53) % 120) as f64 + 0.25 * (i % 4) as f64)
            .collect();
        let pop = Population::from_covariate(z).unwrap();
        let cov = Covariate::new(pop.z()).unwrap();
        (pop, cov)
    }

    #[test]
    fn residuals_vanish_in_span() {
        let (pop, cov) = toy();
        let d = draw_srswor(&pop, 40, 3).unwrap();
        let spec = SplineSpec::regression(2, 3);
        let fit = residual_fit(&d, &cov, &spec, &[0.7; 40]).unwrap();
        assert!(fit.residuals.iter().all(|e| e.abs() < 1e-10));
        let weights = bspline_weights(&d, &cov, &spec).unwrap();
        let via = ResidualFit::from_weights(&weights, &[0.7; 40]).unwrap();
        assert!(via.residuals.iter().all(|e| e.abs() < 1e-10));
        let ht = ResidualFit::from_weights(&ht_weights(&d), &[0.7; 40]).unwrap();
        assert_eq!(ht.residuals, vec![0.7; 40]);
    }

    #[test]
    fn order_one_residuals_are_cell_centered() {
        let (pop, cov) = toy();
        let d = draw_srswor(&pop, 30, 11).unwrap();
        let spec = SplineSpec::regression(1, 1).with_rule(KnotRule::Equidistant);
        let u: Vec<f64> = (0..30).map(|i| ((i * 13) % 7) as f64).collect();
        let fit = residual_fit(&d, &cov, &spec, &u).unwrap();
        let z = d.restrict(cov.normalized());
        for cell in [false, true] {
            let sum: f64 = fit
                .residuals
                .iter()
                .zip(&z)
                .filter(|(_, t)| (**t >= 0.5) == cell)
                .map(|(e, _)| e)
                .sum();
            assert!(sum.abs() < 1e-10);
        }
        for (e, (g, uk)) in fit.residuals.iter().zip(fit.fitted.iter().zip(&u)) {
            assert_eq!(*e, uk - g);
        }
    }

    #[test]
    fn residual_variance_grows_with_penalty() {
        let (pop, cov) = toy();
        let d = draw_srswor(&pop, 50, 21).unwrap();
        let z = d.restrict(cov.normalized());
        let u: Vec<f64> = z.iter().map(|t| (5.0 * t).sin() + 2.0 * t).collect();
        let mut last = -1.0;
        for lambda in [0.0, 1.0, 10.0, 100.0] {
            let spec = SplineSpec::regression(2, 4).with_penalty(lambda, 1);
            let fit = residual_fit(&d, &cov, &spec, &u).unwrap();
            let m = fit.residuals.iter().sum::<f64>() / 50.0;
            let var = fit.residuals.iter().map(|e| (e - m).powi(2)).sum::<f64>();
            assert!(var > last);
            last = var;
        }
    }

    proptest! {
        #[test]
        fn analytic_matches_oracle(seed in 0u64..1000, n in 3usize..60) {
            let y: Vec<f64> = (0..n).map(|i| 1.0 + ((i as u64 * 2654435761 + seed * 97) % 10007) as f64 / 100.0 + i as f64 * 1e-3).collect();
            let x: Vec<f64> = y.iter().map(|v| 0.5 * v + 3.0).collect();
            let m = WeightedMeasure::unit(y).unwrap().with_denominator(x).unwrap();
            for f in [Functional::Total, Functional::Mean, Functional::Ratio] {
                let u = linearize(&f, &m, BandwidthRule::Silverman).unwrap();
                prop_assert!(rel_max(&u.values, &oracle_all(&f, &m)) < 1e-6);
            }
            let ratio = linearized_ratio(&m).unwrap();
            let scale = ratio.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            prop_assert!(ratio.values.iter().sum::<f64>().abs() < 1e-12 * scale * n as f64);
        }
    }
}
