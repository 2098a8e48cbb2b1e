//! One-sample estimation: a weighted plug-in estimate with its linearization
//! variance and confidence interval.

use serde::Serialize;

use crate::calibration_weights::{ht_weights, WeightFamily, WeightSet};
use crate::error::{Error, Result};
use crate::functionals::{Functional, WeightedMeasure};
use crate::linearization::{linearize, BandwidthRule, ResidualFit};
use crate::sampling_designs::SampleDraw;
use crate::variance::{
    confidence_interval, estimate_variance, ResidualSource, VarianceEstimate, VarianceMethod,
};

/// Options shared by every parameter estimated from one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimationOptions {
    pub level: f64,
    pub variance_method: VarianceMethod,
    /// Estimate embedded parameters of û with HT weights (true) or with the
    /// estimator's own weights.
    pub linearize_with_ht: bool,
    pub bandwidth: BandwidthRule,
}

impl Default for EstimationOptions {
    fn default() -> Self {
        Self {
            level: 0.95,
            variance_method: VarianceMethod::Closed,
            linearize_with_ht: true,
            bandwidth: BandwidthRule::Silverman,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    pub parameter: String,
    pub estimate: f64,
    pub variance: Option<VarianceEstimate>,
    pub standard_error: Option<f64>,
    pub confidence_interval: Option<(f64, f64)>,
    pub level: f64,
    pub design: String,
    pub family: WeightFamily,
    pub sample_size: usize,
    pub linearization_weights: &'static str,
    /// Set when the linearized variable comes from the external low-income
    /// or quantile formula.
    pub external_linearization: bool,
    /// Why variance or interval is missing, if they are.
    pub note: Option<String>,
}

/// Per-unit linearization audit: û, ĝ and ê on the sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizationAudit {
    pub units: Vec<usize>,
    pub linearized: Vec<f64>,
    pub fitted: Vec<f64>,
    pub residuals: Vec<f64>,
}

fn measure_for(
    weights: &WeightSet,
    functional: &Functional,
    y: &[f64],
    x: Option<&[f64]>,
) -> Result<WeightedMeasure> {
    let m = WeightedMeasure::from_weights(weights, y)?;
    match (functional, x) {
        (Functional::Ratio, Some(x)) => m.with_denominator(x.to_vec()),
        (Functional::Ratio, None) => Err(Error::InvalidSpec(
            "ratio needs a denominator variable".into(),
        )),
        _ => Ok(m),
    }
}

/// Estimates `functional` from sample values `y` (and `x` for ratios)
/// weighted by `weights`, with variance from the residuals of û against the
/// weights' working model.
pub fn estimate_parameter(
    draw: &SampleDraw,
    design_label: &str,
    weights: &WeightSet,
    functional: &Functional,
    y: &[f64],
    x: Option<&[f64]>,
    options: &EstimationOptions,
) -> Result<(EstimateReport, Option<LinearizationAudit>)> {
    let measure = measure_for(weights, functional, y, x)?;
    let estimate = functional.evaluate(&measure)?;
    let lin_measure = if options.linearize_with_ht {
        measure_for(&ht_weights(draw), functional, y, x)?
    } else {
        measure.clone()
    };
    let mut report = EstimateReport {
        parameter: functional.name(),
        estimate,
        variance: None,
        standard_error: None,
        confidence_interval: None,
        level: options.level,
        design: design_label.to_string(),
        family: weights.family(),
        sample_size: weights.len(),
        linearization_weights: if options.linearize_with_ht {
            "ht"
        } else {
            "same"
        },
        external_linearization: false,
        note: None,
    };
    let linearized = match linearize(functional, &lin_measure, options.bandwidth) {
        Ok(u) => u,
        Err(e) => {
            report.note = Some(format!("linearization failed: {e}"));
            return Ok((report, None));
        }
    };
    report.external_linearization = linearized.external_formula;
    let fit = ResidualFit::from_weights(weights, &linearized.values)?;
    match estimate_variance(draw, &fit.residuals, options.variance_method) {
        Ok(v) => {
            let v = v.with_source(ResidualSource::Linearization);
            report.standard_error = v.standard_error();
            match confidence_interval(estimate, v.value, options.level) {
                Ok(ci) => report.confidence_interval = Some(ci),
                Err(e) => report.note = Some(e.to_string()),
            }
            report.variance = Some(v);
        }
        Err(e) => report.note = Some(format!("variance unavailable: {e}")),
    }
    let audit = LinearizationAudit {
        units: draw.units().to_vec(),
        linearized: linearized.values,
        fitted: fit.fitted,
        residuals: fit.residuals,
    };
    Ok((report, Some(audit)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration_weights::{bspline_weights, Covariate};
    use crate::sampling_designs::draw_srswor;
    use crate::simulation::{synth_population, SynthConfig};
    use crate::spline_basis::SplineSpec;

    #[test]
    fn report_fields() {
        let pop = synth_population(&SynthConfig {
            size: 2000,
            ..Default::default()
        })
        .unwrap();
        let cov = Covariate::new(pop.z()).unwrap();
        let draw = draw_srswor(&pop, 200, 3).unwrap();
        let w = bspline_weights(&draw, &cov, &SplineSpec::regression(2, 2)).unwrap();
        let y = draw.restrict(pop.variable("y").unwrap());
        let (r, audit) = estimate_parameter(
            &draw,
            "SRSWOR(n=200)",
            &w,
            &Functional::Gini,
            &y,
            None,
            &EstimationOptions::default(),
        )
        .unwrap();
        let (lo, hi) = r.confidence_interval.unwrap();
        assert!(lo < r.estimate && r.estimate < hi);
        assert!(!r.external_linearization);
        let audit = audit.unwrap();
        for i in 0..audit.units.len() {
            assert_eq!(audit.residuals[i], audit.linearized[i] - audit.fitted[i]);
        }
        let (p, _) = estimate_parameter(
            &draw,
            "SRSWOR(n=200)",
            &w,
            &Functional::poverty_rate(),
            &y,
            None,
            &EstimationOptions::default(),
        )
        .unwrap();
        assert!(p.external_linearization);
        assert!(p.variance.unwrap().value > 0.0);
    }
}
