//! Design-based variance of estimated totals of residuals, and normal
//! confidence intervals.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration_weights::{build_weights, Covariate, WeightFamily};
use crate::error::{Error, Result};
use crate::linearization::ResidualFit;
use crate::sampling_designs::{Design, Population, SampleDraw};

/// How the variance is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMethod {
    DoubleSum,
    /// SRSWOR or stratified closed form, picked from the draw.
    #[default]
    Closed,
}

impl std::str::FromStr for VarianceMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "double_sum" | "double" => Ok(VarianceMethod::DoubleSum),
            "closed" | "closed_form" => Ok(VarianceMethod::Closed),
            other => Err(Error::InvalidSpec(format!(
                "unknown variance method '{other}'"
            ))),
        }
    }
}

/// The formula that produced a [`VarianceEstimate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceFormula {
    DoubleSum,
    SrsworClosed,
    StsiClosed,
}

/// What the residuals fed into the variance were.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualSource {
    #[default]
    Raw,
    Linearization,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub value: f64,
    pub formula: VarianceFormula,
    pub source: ResidualSource,
    /// Set when a double sum came out negative; the value is kept as is.
    pub negative: bool,
}

impl VarianceEstimate {
    fn new(value: f64, formula: VarianceFormula) -> Self {
        Self {
            value,
            formula,
            source: ResidualSource::Raw,
            negative: value < 0.0,
        }
    }

    pub fn with_source(mut self, source: ResidualSource) -> Self {
        self.source = source;
        self
    }

    pub fn standard_error(&self) -> Option<f64> {
        (self.value >= 0.0).then(|| self.value.sqrt())
    }
}

const ROW_BLOCK: usize = 64;

/// ΣΣ_s (Δ_kl/π_kl)(e_k/π_k)(e_l/π_l). Row blocks run in parallel and are
/// reduced in block order, so the result does not depend on thread count.
pub fn ht_variance_double_sum(draw: &SampleDraw, residuals: &[f64]) -> Result<VarianceEstimate> {
    check_len(draw.len(), residuals.len())?;
    let units = draw.units();
    let pi = draw.pi_all();
    let expanded: Vec<f64> = units
        .iter()
        .zip(residuals)
        .map(|(&k, e)| e / pi[k])
        .collect();
    let blocks: Vec<Result<f64>> = (0..units.len())
        .step_by(ROW_BLOCK)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|start| {
            let mut block = 0.0;
            for i in start..(start + ROW_BLOCK).min(units.len()) {
                let k = units[i];
                let mut row = 0.0;
                for (j, &l) in units.iter().enumerate() {
                    let joint = draw.joint_prob(k, l)?;
                    if joint == 0.0 {
                        return Err(Error::ZeroJointProbability(k, l));
                    }
                    let delta = joint - pi[k] * pi[l];
                    row += delta / joint * expanded[j];
                }
                block += row * expanded[i];
            }
            Ok(block)
        })
        .collect();
    let mut value = 0.0;
    for b in blocks {
        value += b?;
    }
    Ok(VarianceEstimate::new(value, VarianceFormula::DoubleSum))
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::LengthMismatch { expected, got })
    }
}

/// Sample variance with divisor n − 1.
fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

fn srswor_term(population: usize, residuals: &[f64]) -> Result<f64> {
    let n = residuals.len();
    if n < 2 {
        return Err(Error::VarianceSampleTooSmall);
    }
    if n > population {
        return Err(Error::InvalidDesign(format!(
            "sample size {n} exceeds population size {population}"
        )));
    }
    let big_n = population as f64;
    let f = n as f64 / big_n;
    Ok(big_n * big_n * (1.0 - f) * sample_variance(residuals) / n as f64)
}

/// N²(1 − n/N) s²_e / n.
pub fn srswor_variance(population: usize, residuals: &[f64]) -> Result<VarianceEstimate> {
    Ok(VarianceEstimate::new(
        srswor_term(population, residuals)?,
        VarianceFormula::SrsworClosed,
    ))
}

/// Residuals of one stratum with its population size.
#[derive(Debug, Clone, PartialEq)]
pub struct StratumResiduals {
    pub population: usize,
    pub residuals: Vec<f64>,
}

/// Σ_h N_h²(1 − n_h/N_h) s²_{e,h} / n_h.
pub fn stsi_variance(strata: &[StratumResiduals]) -> Result<VarianceEstimate> {
    let mut value = 0.0;
    for s in strata {
        value += srswor_term(s.population, &s.residuals)?;
    }
    Ok(VarianceEstimate::new(value, VarianceFormula::StsiClosed))
}

/// Closed form matching the draw's design.
pub fn closed_form_variance(draw: &SampleDraw, residuals: &[f64]) -> Result<VarianceEstimate> {
    check_len(draw.len(), residuals.len())?;
    if draw.is_srswor() {
        return srswor_variance(draw.population_size(), residuals);
    }
    match (draw.stratum_sizes(), draw.sample_strata()) {
        (Some(sizes), Some(labels)) => {
            let mut groups: Vec<StratumResiduals> = sizes
                .iter()
                .map(|s| StratumResiduals {
                    population: s.population,
                    residuals: Vec::with_capacity(s.sample),
                })
                .collect();
            for (h, e) in labels.iter().zip(residuals) {
                groups[*h].residuals.push(*e);
            }
            stsi_variance(&groups)
        }
        _ => Err(Error::InvalidDesign(
            "no closed-form variance for this design".into(),
        )),
    }
}

/// Variance of the estimated total of `residuals` by the chosen method.
pub fn estimate_variance(
    draw: &SampleDraw,
    residuals: &[f64],
    method: VarianceMethod,
) -> Result<VarianceEstimate> {
    match method {
        VarianceMethod::DoubleSum => ht_variance_double_sum(draw, residuals),
        VarianceMethod::Closed => closed_form_variance(draw, residuals),
    }
}

/// Population variance of a total of `values` under `design`.
pub fn design_variance_of_total(
    population: &Population,
    design: &Design,
    values: &[f64],
) -> Result<f64> {
    check_len(population.len(), values.len())?;
    match design {
        Design::Srswor { n } => srswor_population_term(values.len(), *n, values),
        Design::Stratified { allocations } => {
            let members = population
                .stratum_members()
                .ok_or_else(|| Error::MissingStratum("population has no strata".into()))?;
            let labels = population.stratum_labels();
            let mut total = 0.0;
            for (h, m) in members.iter().enumerate() {
                let n_h = *allocations
                    .get(&labels[h])
                    .ok_or_else(|| Error::MissingAllocation(labels[h].clone()))?;
                let vals: Vec<f64> = m.iter().map(|&k| values[k]).collect();
                total += srswor_population_term(m.len(), n_h, &vals)?;
            }
            Ok(total)
        }
        Design::GivenProbabilities { pi } => {
            check_len(values.len(), pi.len())?;
            Ok(values
                .iter()
                .zip(pi)
                .map(|(v, p)| (1.0 - p) / p * v * v)
                .sum())
        }
    }
}

/// N²(1 − n/N) S²/n with the population variance S² (divisor N − 1).
fn srswor_population_term(population: usize, n: usize, values: &[f64]) -> Result<f64> {
    if n == 0 || n > population {
        return Err(Error::InvalidDesign(format!(
            "sample size {n} incompatible with N = {population}"
        )));
    }
    if n == population || population < 2 {
        return Ok(0.0);
    }
    let big_n = population as f64;
    let f = n as f64 / big_n;
    Ok(big_n * big_n * (1.0 - f) * sample_variance(values) / n as f64)
}

/// Asymptotic variance: the design variance of the total of u − g̃, with g̃
/// the census fit of `family`'s working model (zero for HT).
pub fn population_asymptotic_variance(
    population: &Population,
    design: &Design,
    covariate: &Covariate,
    population_u: &[f64],
    family: &WeightFamily,
) -> Result<f64> {
    check_len(population.len(), population_u.len())?;
    let census = SampleDraw::census(population.len());
    let weights = build_weights(&census, covariate, family)?;
    let fit = ResidualFit::from_weights(&weights, population_u)?;
    design_variance_of_total(population, design, &fit.residuals)
}

/// estimate ± z_{(1+level)/2} √variance.
pub fn confidence_interval(estimate: f64, variance: f64, level: f64) -> Result<(f64, f64)> {
    if variance < 0.0 {
        return Err(Error::NegativeVariance(variance));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidSpec(format!(
            "confidence level {level} outside (0, 1)"
        )));
    }
    let half = inverse_normal(0.5 * (1.0 + level)) * variance.sqrt();
    Ok((estimate - half, estimate + half))
}

/// Standard normal quantile (Wichura's AS 241, about 1e-16 relative).
pub fn inverse_normal(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let r = (-r.ln()).sqrt();
    let value = if r <= 5.0 {
        let r = r - 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        let r = r - 5.0;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -value
    } else {
        value
    }
}

fn poly(coef: &[f64; 8], x: f64) -> f64 {
    coef.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

const A: [f64; 8] = [
    3.387_132_872_796_366_5,
    133.141_667_891_784_38,
    1_971.590_950_306_551_3,
    13_731.693_765_509_46,
    45_921.953_931_549_87,
    67_265.770_927_008_7,
    33_430.575_583_588_13,
    2_509.080_928_730_122_7,
];
const B: [f64; 8] = [
    1.0,
    42.313_330_701_600_91,
    687.187_007_492_057_9,
    5_394.196_021_424_751,
    21_213.794_301_586_597,
    39_307.895_800_092_71,
    28_729.085_735_721_943,
    5_226.495_278_852_545,
];
const C: [f64; 8] = [
    1.423_437_110_749_683_5,
    4.630_337_846_156_546,
    5.769_497_221_460_691,
    3.647_848_324_763_204_5,
    1.270_458_252_452_368_4,
    0.241_780_725_177_450_6,
    0.022_723_844_989_269_184,
    7.745_450_142_783_414e-4,
];
const D: [f64; 8] = [
    1.0,
    2.053_191_626_637_759,
    1.676_384_830_183_803_8,
    0.689_767_334_985_1,
    0.148_103_976_427_480_08,
    0.015_198_666_563_616_457,
    5.475_938_084_995_345e-4,
    1.050_750_071_644_416_9e-9,
];
const E: [f64; 8] = [
    6.657_904_643_501_103,
    5.463_784_911_164_114,
    1.784_826_539_917_291_3,
    0.296_560_571_828_504_9,
    0.026_532_189_526_576_124,
    0.001_242_660_947_388_078_4,
    2.711_555_568_743_487_6e-5,
    2.010_334_399_292_288_1e-7,
];
const F: [f64; 8] = [
    1.0,
    0.599_832_206_555_888,
    0.136_929_880_922_735_8,
    0.014_875_361_290_850_615,
    7.868_691_311_456_133e-4,
    1.846_318_317_510_054_8e-5,
    1.421_511_758_316_446e-7,
    2.044_263_103_389_939_8e-15,
];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling_designs::draw_srswor;
    use crate::sampling_designs::draw_stratified;
    use std::collections::BTreeMap;

    fn pop(n: usize) -> Population {
        Population::from_covariate((0..n).map(|i| i as f64).collect()).unwrap()
    }

    #[test]
    fn double_sum_matches_hand_example() {
        let d = draw_srswor(&pop(4), 2, 5).unwrap();
        let v = ht_variance_double_sum(&d, &[1.0, -1.0]).unwrap();
        assert!((v.value - 8.0).abs() < 1e-12);
        assert_eq!(v.formula, VarianceFormula::DoubleSum);
        assert_eq!(ht_variance_double_sum(&d, &[0.0, 0.0]).unwrap().value, 0.0);
        let census = draw_srswor(&pop(4), 4, 5).unwrap();
        assert!(
            ht_variance_double_sum(&census, &[1.0, 5.0, -2.0, 3.0])
                .unwrap()
                .value
                .abs()
                < 1e-12
        );
    }

    #[test]
    fn closed_forms() {
        assert!((srswor_variance(4, &[1.0, -1.0]).unwrap().value - 8.0).abs() < 1e-12);
        assert_eq!(srswor_variance(10, &[2.0; 5]).unwrap().value, 0.0);
        assert_eq!(
            srswor_variance(10, &[2.0]),
            Err(Error::VarianceSampleTooSmall)
        );
        let one = stsi_variance(&[StratumResiduals {
            population: 4,
            residuals: vec![1.0, -1.0],
        }])
        .unwrap();
        assert_eq!(one.value, srswor_variance(4, &[1.0, -1.0]).unwrap().value);
        assert_eq!(one.formula, VarianceFormula::StsiClosed);
    }

    #[test]
    fn routes_agree_on_stratified() {
        let labels: Vec<&str> = (0..90).map(|i| ["a", "b", "c"][i % 3]).collect();
        let p = pop(90).with_strata(&labels).unwrap();
        let alloc = BTreeMap::from([
            ("a".to_string(), 4),
            ("b".to_string(), 9),
            ("c".to_string(), 2),
        ]);
        let d = draw_stratified(&p, &alloc, 1).unwrap();
        let e: Vec<f64> = (0..d.len()).map(|i| ((i * 31) % 17) as f64 - 8.0).collect();
        let a = ht_variance_double_sum(&d, &e).unwrap().value;
        let b = closed_form_variance(&d, &e).unwrap().value;
        assert!((a - b).abs() <= 1e-10 * b.abs());
    }

    #[test]
    fn asymptotic_variance_examples() {
        let p = pop(4);
        let design = Design::Srswor { n: 2 };
        let e = [1.0, -1.0, 2.0, 0.0];
        // S² = 5/3; 16 · 0.5 · (5/3) / 2.
        let v = design_variance_of_total(&p, &design, &e).unwrap();
        assert!((v - 20.0 / 3.0).abs() < 1e-12);
        assert_eq!(
            design_variance_of_total(&p, &Design::Srswor { n: 4 }, &e).unwrap(),
            0.0
        );
        let cov = Covariate::new(p.z()).unwrap();
        let spec = crate::spline_basis::SplineSpec::regression(2, 0);
        let linear: Vec<f64> = p.z().iter().map(|z| 3.0 - 0.5 * z).collect();
        let av = population_asymptotic_variance(
            &p,
            &design,
            &cov,
            &linear,
            &WeightFamily::BSpline { spec },
        )
        .unwrap();
        assert!(av.abs() < 1e-20);
    }

    #[test]
    fn intervals() {
        let (lo, hi) = confidence_interval(10.0, 4.0, 0.95).unwrap();
        assert!((lo - 6.0801).abs() < 1e-4 && (hi - 13.9199).abs() < 1e-4);
        assert_eq!(confidence_interval(3.0, 0.0, 0.95).unwrap(), (3.0, 3.0));
        assert!((inverse_normal(0.75) - 0.674_489_750_196_081_7).abs() < 1e-12);
        assert!((inverse_normal(0.975) - 1.959_963_984_540_054).abs() < 1e-12);
        assert!((inverse_normal(1e-10) + 6.361_340_902_404_056).abs() < 1e-9);
        assert_eq!(
            confidence_interval(1.0, -1.0, 0.95),
            Err(Error::NegativeVariance(-1.0))
        );
    }

    #[test]
    fn double_sum_thread_independent() {
        let d = draw_srswor(&pop(1000), 300, 2).unwrap();
        let e: Vec<f64> = (0..300).map(|i| (i as f64 * 0.37).sin()).collect();
        let a = ht_variance_double_sum(&d, &e).unwrap().value;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let b = pool.install(|| ht_variance_double_sum(&d, &e).unwrap().value);
        assert_eq!(a, b);
    }
}
