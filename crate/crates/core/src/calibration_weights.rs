//! Weight families built from the auxiliary covariate: Horvitz–Thompson,
//! poststratified, GREG and penalized B-spline.
//!
//! All auxiliary-based families share one construction. With sample design
//! rows `x_k`, `A = Σ_s x_k x_k'/π_k + λD` and population column totals
//! `t_x = Σ_U x_k`, the weights are
//!
//! ```text
//! w_k = (1/π_k) (1 + x_k' A⁻¹ (t_x − Σ_s x_k/π_k))
//! ```
//!
//! and the fit of any sample variable `v` is `x' A⁻¹ Σ_s x_k v_k/π_k`. The
//! resulting [`WeightSet`] is independent of the study variables, so one set
//! serves every parameter estimated from a sample.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SymmetricSolver;
use crate::sampling_designs::SampleDraw;
use crate::spline_basis::{
    basis_row_sparse, build_knots, normalize_covariate, penalty_matrix, CovariateMap, KnotRule,
    KnotVector, SplineSpec,
};

/// The population covariate mapped onto [0, 1], computed once per population.
#[derive(Debug, Clone)]
pub struct Covariate {
    raw: Vec<f64>,
    normalized: Vec<f64>,
    sorted: Vec<f64>,
    map: CovariateMap,
}

impl Covariate {
    pub fn new(population_z: &[f64]) -> Result<Self> {
        let (normalized, map) = normalize_covariate(population_z)?;
        let mut sorted = normalized.clone();
        sorted.sort_by(|a, b| a.total_cmp(b));
        Ok(Self {
            raw: population_z.to_vec(),
            normalized,
            sorted,
            map,
        })
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    pub fn normalized(&self) -> &[f64] {
        &self.normalized
    }

    pub fn map(&self) -> CovariateMap {
        self.map
    }

    /// Knots for `spec`, taking quantiles over the sample or the population.
    pub fn knots_for(&self, spec: &SplineSpec, units: &[usize]) -> Result<KnotVector> {
        match spec.knot_rule {
            KnotRule::Equidistant => build_knots(spec, &[]),
            KnotRule::SampleQuantile => {
                let reference: Vec<f64> = units.iter().map(|&k| self.normalized[k]).collect();
                build_knots(spec, &reference)
            }
            KnotRule::PopulationQuantile => build_knots(spec, &self.sorted),
        }
    }
}

/// Which weight system a [`WeightSet`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "family")]
pub enum WeightFamily {
    Ht,
    Greg,
    Post {
        interior_knots: usize,
    },
    #[serde(rename = "bs")]
    BSpline {
        spec: SplineSpec,
    },
}

impl WeightFamily {
    pub fn tag(&self) -> &'static str {
        match self {
            WeightFamily::Ht => "HT",
            WeightFamily::Greg => "GREG",
            WeightFamily::Post { .. } => "POST",
            WeightFamily::BSpline { .. } => "BS",
        }
    }

    /// Table label such as `BS(2)`.
    pub fn label(&self) -> String {
        match self {
            WeightFamily::BSpline { spec } => format!("BS({})", spec.order),
            other => other.tag().to_string(),
        }
    }

    pub fn interior_knots(&self) -> Option<usize> {
        match self {
            WeightFamily::Post { interior_knots } => Some(*interior_knots),
            WeightFamily::BSpline { spec } => Some(spec.interior_knots),
            _ => None,
        }
    }

    pub fn spline_spec(&self) -> Option<SplineSpec> {
        match self {
            WeightFamily::Post { interior_knots } => {
                Some(SplineSpec::regression(1, *interior_knots))
            }
            WeightFamily::BSpline { spec } => Some(*spec),
            _ => None,
        }
    }
}

/// Columns used by the working model.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelColumns {
    /// Intercept and normalized covariate.
    Linear,
    Spline {
        knots: KnotVector,
        order: usize,
    },
}

impl ModelColumns {
    pub fn dim(&self) -> usize {
        match self {
            ModelColumns::Linear => 2,
            ModelColumns::Spline { knots, order } => knots.dim(*order),
        }
    }

    /// Accumulates the row of columns at normalized covariate `t` into `out`
    /// scaled by `scale`.
    fn add_row(&self, t: f64, scale: f64, out: &mut [f64]) -> Result<()> {
        match self {
            ModelColumns::Linear => {
                out[0] += scale;
                out[1] += scale * t;
            }
            ModelColumns::Spline { knots, order } => {
                let row = basis_row_sparse(knots, *order, t)?;
                for (j, v) in row.values.iter().enumerate() {
                    out[row.first + j] += scale * v;
                }
            }
        }
        Ok(())
    }

    pub fn row(&self, t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.add_row(t, 1.0, &mut out)?;
        Ok(out)
    }
}

/// Design-weighted working model shared by weights and fits.
#[derive(Debug, Clone)]
pub struct AssistingModel {
    columns: ModelColumns,
    sample_rows: DMatrix<f64>,
    inv_pi: Vec<f64>,
    solver: SymmetricSolver,
    population_totals: DVector<f64>,
    ht_totals: DVector<f64>,
    map: CovariateMap,
    penalty_approximate: bool,
}

impl AssistingModel {
    fn build(
        draw: &SampleDraw,
        covariate: &Covariate,
        columns: ModelColumns,
        penalty: Option<DMatrix<f64>>,
        penalty_approximate: bool,
    ) -> Result<Self> {
        if covariate.len() != draw.population_size() {
            return Err(Error::LengthMismatch {
                expected: draw.population_size(),
                got: covariate.len(),
            });
        }
        let q = columns.dim();
        let n = draw.len();
        let z = covariate.normalized();
        let mut sample_rows = DMatrix::zeros(n, q);
        let mut inv_pi = Vec::with_capacity(n);
        let mut ht = vec![0.0; q];
        let mut normal = DMatrix::zeros(q, q);
        for (i, &k) in draw.units().iter().enumerate() {
            let row = columns.row(z[k])?;
            let w = 1.0 / draw.pi_all()[k];
            inv_pi.push(w);
            for a in 0..q {
                sample_rows[(i, a)] = row[a];
                if row[a] == 0.0 {
                    continue;
                }
                ht[a] += w * row[a];
                for b in 0..q {
                    normal[(a, b)] += w * row[a] * row[b];
                }
            }
        }
        if let Some(p) = penalty {
            normal += p;
        }
        let mut totals = vec![0.0; q];
        for &t in z {
            columns.add_row(t, 1.0, &mut totals)?;
        }
        let solver = SymmetricSolver::new(normal)?;
        Ok(Self {
            columns,
            sample_rows,
            inv_pi,
            solver,
            population_totals: DVector::from_vec(totals),
            ht_totals: DVector::from_vec(ht),
            map: covariate.map(),
            penalty_approximate,
        })
    }

    pub fn columns(&self) -> &ModelColumns {
        &self.columns
    }

    pub fn knots(&self) -> Option<&KnotVector> {
        match &self.columns {
            ModelColumns::Spline { knots, .. } => Some(knots),
            ModelColumns::Linear => None,
        }
    }

    pub fn rcond(&self) -> f64 {
        self.solver.rcond()
    }

    pub fn penalty_approximate(&self) -> bool {
        self.penalty_approximate
    }

    /// Σ_U x_k.
    pub fn population_totals(&self) -> &DVector<f64> {
        &self.population_totals
    }

    /// Σ_s x_k / π_k.
    pub fn ht_totals(&self) -> &DVector<f64> {
        &self.ht_totals
    }

    /// Sample design rows, one per sampled unit.
    pub fn sample_rows(&self) -> &DMatrix<f64> {
        &self.sample_rows
    }

    /// θ̂ = A⁻¹ Σ_s x_k v_k / π_k.
    pub fn fit(&self, values_on_sample: &[f64]) -> Result<DVector<f64>> {
        check_len(self.inv_pi.len(), values_on_sample.len())?;
        let weighted: Vec<f64> = values_on_sample
            .iter()
            .zip(&self.inv_pi)
            .map(|(v, w)| v * w)
            .collect();
        let rhs = self.sample_rows.tr_mul(&DVector::from_vec(weighted));
        Ok(self.solver.solve(&rhs))
    }

    /// x_k' θ over the sampled units.
    pub fn fitted_on_sample(&self, coefficients: &DVector<f64>) -> Vec<f64> {
        (&self.sample_rows * coefficients).iter().copied().collect()
    }

    /// x(z)' θ at a raw covariate value.
    pub fn predict(&self, raw_z: f64, coefficients: &DVector<f64>) -> Result<f64> {
        let row = self.columns.row(self.map.apply(raw_z))?;
        Ok(row
            .iter()
            .zip(coefficients.iter())
            .map(|(a, b)| a * b)
            .sum())
    }
}

/// One weight per sampled unit plus, for auxiliary families, the working
/// model that produced them.
#[derive(Debug, Clone)]
pub struct WeightSet {
    units: Vec<usize>,
    pi: Vec<f64>,
    weights: Vec<f64>,
    family: WeightFamily,
    model: Option<AssistingModel>,
    /// A⁻¹ (t_x − Σ_s x_k/π_k) for auxiliary families.
    coefficients: Option<DVector<f64>>,
}

impl WeightSet {
    pub fn units(&self) -> &[usize] {
        &self.units
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn family(&self) -> WeightFamily {
        self.family
    }

    pub fn model(&self) -> Option<&AssistingModel> {
        self.model.as_ref()
    }

    pub fn coefficients(&self) -> Option<&DVector<f64>> {
        self.coefficients.as_ref()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Fitted values ĝ_k of `values_on_sample` under the family's working
    /// model; zero for HT.
    pub fn fitted(&self, values_on_sample: &[f64]) -> Result<Vec<f64>> {
        check_len(self.len(), values_on_sample.len())?;
        match &self.model {
            None => Ok(vec![0.0; self.len()]),
            Some(model) => {
                let theta = model.fit(values_on_sample)?;
                Ok(model.fitted_on_sample(&theta))
            }
        }
    }

    pub fn diagnostics(&self) -> WeightDiagnostics {
        let calibration_residuals = match &self.model {
            None => Vec::new(),
            Some(model) => {
                let w = DVector::from_column_slice(&self.weights);
                let achieved = model.sample_rows.tr_mul(&w);
                (achieved - &model.population_totals)
                    .iter()
                    .copied()
                    .collect()
            }
        };
        WeightDiagnostics {
            family: self.family.tag().to_string(),
            sample_size: self.len(),
            total_mass: self.total_mass(),
            negative_weights: self.weights.iter().filter(|&&w| w < 0.0).count(),
            min_weight: self.weights.iter().copied().fold(f64::INFINITY, f64::min),
            max_weight: self
                .weights
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max),
            reciprocal_condition: self.model.as_ref().map(|m| m.rcond()),
            calibration_residuals,
            interior_knots: self
                .model
                .as_ref()
                .and_then(|m| m.knots())
                .map(|k| k.interior().to_vec()),
            penalty_approximate: self.model.as_ref().is_some_and(|m| m.penalty_approximate()),
        }
    }
}

/// Summary emitted alongside a weight file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightDiagnostics {
    pub family: String,
    pub sample_size: usize,
    pub total_mass: f64,
    pub negative_weights: usize,
    pub min_weight: f64,
    pub max_weight: f64,
    pub reciprocal_condition: Option<f64>,
    /// Σ_s w_k x_kj − Σ_U x_kj per model column.
    pub calibration_residuals: Vec<f64>,
    pub interior_knots: Option<Vec<f64>>,
    pub penalty_approximate: bool,
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::LengthMismatch { expected, got })
    }
}

/// w_k = 1/π_k.
pub fn ht_weights(draw: &SampleDraw) -> WeightSet {
    let pi = draw.pi_sample();
    WeightSet {
        units: draw.units().to_vec(),
        weights: pi.iter().map(|p| 1.0 / p).collect(),
        pi,
        family: WeightFamily::Ht,
        model: None,
        coefficients: None,
    }
}

fn calibrated(draw: &SampleDraw, family: WeightFamily, model: AssistingModel) -> WeightSet {
    let gap = &model.population_totals - &model.ht_totals;
    let c = model.solver.solve(&gap);
    let adjust = &model.sample_rows * &c;
    let weights = model
        .inv_pi
        .iter()
        .zip(adjust.iter())
        .map(|(w, a)| w * (1.0 + a))
        .collect();
    WeightSet {
        units: draw.units().to_vec(),
        pi: draw.pi_sample(),
        weights,
        family,
        model: Some(model),
        coefficients: Some(c),
    }
}

/// Order-1 splines are interval indicators, so the normal matrix is diagonal
/// and the weights are the poststratified (1/π_k)·N_h/N̂_h.
fn indicator_weights(
    draw: &SampleDraw,
    covariate: &Covariate,
    spec: SplineSpec,
    knots: KnotVector,
) -> Result<WeightSet> {
    let z = covariate.normalized();
    let cells = knots.len() + 1;
    let mut pop_counts = vec![0.0; cells];
    for &t in z {
        pop_counts[knots.interval(t)] += 1.0;
    }
    let mut ht_counts = vec![0.0; cells];
    for &k in draw.units() {
        ht_counts[knots.interval(z[k])] += 1.0 / draw.pi_all()[k];
    }
    if let Some(h) = ht_counts.iter().position(|&c| c == 0.0) {
        return Err(Error::EmptyPoststratum(h));
    }
    let columns = ModelColumns::Spline {
        knots: knots.clone(),
        order: 1,
    };
    let model = AssistingModel::build(draw, covariate, columns, None, false)?;
    let weights = draw
        .units()
        .iter()
        .map(|&k| {
            let h = knots.interval(z[k]);
            (1.0 / draw.pi_all()[k]) * (pop_counts[h] / ht_counts[h])
        })
        .collect();
    let gap = &model.population_totals - &model.ht_totals;
    let c = model.solver.solve(&gap);
    Ok(WeightSet {
        units: draw.units().to_vec(),
        pi: draw.pi_sample(),
        weights,
        family: WeightFamily::BSpline { spec },
        model: Some(model),
        coefficients: Some(c),
    })
}

fn spline_model(
    draw: &SampleDraw,
    covariate: &Covariate,
    spec: &SplineSpec,
) -> Result<AssistingModel> {
    let knots = covariate.knots_for(spec, draw.units())?;
    let (penalty, approximate) = if spec.is_penalized() {
        let pen = penalty_matrix(spec, &knots)?;
        (Some(pen.matrix * spec.lambda), pen.approximate)
    } else {
        (None, false)
    };
    let columns = ModelColumns::Spline {
        knots,
        order: spec.order,
    };
    AssistingModel::build(draw, covariate, columns, penalty, approximate)
}

/// Penalized B-spline weights
/// `w = Π⁻¹1 − Π⁻¹B (B'Π⁻¹B + λD)⁻¹ (B'Π⁻¹1 − B_U'1)`.
pub fn bspline_weights(
    draw: &SampleDraw,
    covariate: &Covariate,
    spec: &SplineSpec,
) -> Result<WeightSet> {
    spec.validate()?;
    if spec.order == 1 {
        let knots = covariate.knots_for(spec, draw.units())?;
        return indicator_weights(draw, covariate, *spec, knots);
    }
    let model = spline_model(draw, covariate, spec)?;
    Ok(calibrated(
        draw,
        WeightFamily::BSpline { spec: *spec },
        model,
    ))
}

/// Unpenalized projection form `w = Π⁻¹B (B'Π⁻¹B)⁻¹ B_U'1`, the prediction
/// total of the regression spline.
pub fn bspline_projection_weights(
    draw: &SampleDraw,
    covariate: &Covariate,
    spec: &SplineSpec,
) -> Result<Vec<f64>> {
    spec.validate()?;
    let spec = SplineSpec {
        lambda: 0.0,
        ..*spec
    };
    let model = spline_model(draw, covariate, &spec)?;
    let a = model.solver.solve(&model.population_totals);
    let proj = &model.sample_rows * a;
    Ok(model
        .inv_pi
        .iter()
        .zip(proj.iter())
        .map(|(w, p)| w * p)
        .collect())
}

/// Poststratified weights with `interior_knots + 1` cells bounded at sample
/// quantiles of z; the order-1 unpenalized B-spline weights.
pub fn post_weights(
    draw: &SampleDraw,
    covariate: &Covariate,
    interior_knots: usize,
) -> Result<WeightSet> {
    let spec = SplineSpec::regression(1, interior_knots);
    let mut set = bspline_weights(draw, covariate, &spec)?;
    set.family = WeightFamily::Post { interior_knots };
    Ok(set)
}

/// Regression-calibration weights for the working model y = a + b z.
pub fn greg_weights(draw: &SampleDraw, covariate: &Covariate) -> Result<WeightSet> {
    let z = covariate.normalized();
    let first = draw.units().first().map(|&k| z[k]);
    if draw.units().iter().all(|&k| Some(z[k]) == first) {
        return Err(Error::Collinear(
            "sampled covariate values are all equal".into(),
        ));
    }
    let model =
        AssistingModel::build(draw, covariate, ModelColumns::Linear, None, false).map_err(|e| {
            match e {
                Error::SingularSystem { rcond } => {
                    Error::Collinear(format!("reciprocal condition {rcond:.3e}"))
                }
                other => other,
            }
        })?;
    Ok(calibrated(draw, WeightFamily::Greg, model))
}

/// Builds the weight set of any family.
pub fn build_weights(
    draw: &SampleDraw,
    covariate: &Covariate,
    family: &WeightFamily,
) -> Result<WeightSet> {
    match family {
        WeightFamily::Ht => Ok(ht_weights(draw)),
        WeightFamily::Greg => greg_weights(draw, covariate),
        WeightFamily::Post { interior_knots } => post_weights(draw, covariate, *interior_knots),
        WeightFamily::BSpline { spec } => bspline_weights(draw, covariate, spec),
    }
}

/// θ̂ = (B'Π⁻¹B + λD)⁻¹ B'Π⁻¹v with the model of a spline fit on the sample.
pub fn fit_coefficients(
    draw: &SampleDraw,
    covariate: &Covariate,
    spec: &SplineSpec,
    values_on_sample: &[f64],
) -> Result<(DVector<f64>, AssistingModel)> {
    spec.validate()?;
    let model = spline_model(draw, covariate, spec)?;
    let theta = model.fit(values_on_sample)?;
    Ok((theta, model))
}

/// Σ_s w_k v_k.
pub fn weighted_total(weights: &WeightSet, values_on_sample: &[f64]) -> Result<f64> {
    check_len(weights.len(), values_on_sample.len())?;
    Ok(weights
        .weights
        .iter()
        .zip(values_on_sample)
        .map(|(w, v)| w * v)
        .sum())
}

/// Difference form `Σ_s y_k/π_k − (Σ_s x_k/π_k − Σ_U x_k)' θ̂_y`; equal to
/// [`weighted_total`] for auxiliary families.
pub fn difference_form_total(weights: &WeightSet, values_on_sample: &[f64]) -> Result<f64> {
    check_len(weights.len(), values_on_sample.len())?;
    let ht: f64 = values_on_sample
        .iter()
        .zip(&weights.pi)
        .map(|(v, p)| v / p)
        .sum();
    match &weights.model {
        None => Ok(ht),
        Some(model) => {
            let theta = model.fit(values_on_sample)?;
            let gap = &model.ht_totals - &model.population_totals;
            Ok(ht - gap.dot(&theta))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling_designs::{draw_srswor, Population};
    use crate::spline_basis::{basis_row, truncated_power_row};

    fn toy_population(n: usize) -> Population {
        let z: Vec<f64> = (0..n)
            .map(|i| ((i * 37) % n) as f64 + 0.5 * (i % 3) as f64)
            .collect();
        Population::from_covariate(z).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / (1.0 + b.abs())
    }

    #[test]
    fn ht_examples() {
        let pop = toy_population(10);
        let d = draw_srswor(&pop, 2, 1).unwrap();
        let w = ht_weights(&d);
        assert!(w.weights().iter().all(|&x| (x - 5.0).abs() < 1e-14));
        let census = draw_srswor(&pop, 10, 1).unwrap();
        assert!(ht_weights(&census).weights().iter().all(|&x| x == 1.0));
        let y = vec![7.0, 2.0];
        assert!((weighted_total(&w, &y).unwrap() - 45.0).abs() < 1e-12);
        assert!(weighted_total(&w, &[1.0]).is_err());
    }

    #[test]
    fn weighted_total_half_probability() {
        let pop = toy_population(6);
        let d = draw_srswor(&pop, 3, 4).unwrap();
        let w = ht_weights(&d);
        assert_eq!(weighted_total(&w, &[1.0, 2.0, 3.0]).unwrap(), 12.0);
        assert_eq!(weighted_total(&w, &[0.0; 3]).unwrap(), 0.0);
    }

    #[test]
    fn greg_toy_solves_calibration_system() {
        // z = 1,2,3,4; s = {1,3}; π = 1/2: w1 + w3 = 4, w1 + 3 w3 = 10.
        let pop = Population::from_covariate(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let cov = Covariate::new(pop.z()).unwrap();
        let mut seed = 0;
        let d = loop {
            let d = draw_srswor(&pop, 2, seed).unwrap();
            if d.units() == [0, 2] {
                break d;
            }
            seed += 1;
        };
        let w = greg_weights(&d, &cov).unwrap();
        assert!((w.weights()[0] - 1.0).abs() < 1e-12, "{:?}", w.weights());
        assert!((w.weights()[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn greg_census_is_unit() {
        let pop = toy_population(20);
        let cov = Covariate::new(pop.z()).unwrap();
        let d = draw_srswor(&pop, 20, 0).unwrap();
        let w = greg_weights(&d, &cov).unwrap();
        assert!(w.weights().iter().all(|&x| (x - 1.0).abs() < 1e-12));
    }

    #[test]
    fn greg_calibrates_and_rejects_constant_sample() {
        let pop = toy_population(200);
        let cov = Covariate::new(pop.z()).unwrap();
        let d = draw_srswor(&pop, 30, 3).unwrap();
        let w = greg_weights(&d, &cov).unwrap();
        let zs = d.restrict(pop.z());
        let tz: f64 = pop.z().iter().sum();
        assert!(rel(w.total_mass(), 200.0) < 1e-8);
        assert!(rel(weighted_total(&w, &zs).unwrap(), tz) < 1e-8);

        let flat = Population::from_covariate(vec![1.0, 1.0, 1.0, 2.0]).unwrap();
        let cov = Covariate::new(flat.z()).unwrap();
        let d = draw_srswor(&flat, 1, 0).unwrap();
        assert!(matches!(greg_weights(&d, &cov), Err(Error::Collinear(_))));
    }

    #[test]
    fn post_weights_by_hand() {
        // Poststrata of sizes {4, 2} split at z = 0.5; sample hits {2, 1}.
        let pop = Population::from_covariate(vec![0.0, 0.1, 0.2, 0.3, 0.8, 1.0]).unwrap();
        let cov = Covariate::new(pop.z()).unwrap();
        let spec = SplineSpec::regression(1, 1).with_rule(KnotRule::Equidistant);
        let mut seed = 0;
        let d = loop {
            let d = draw_srswor(&pop, 3, seed).unwrap();
            if d.units().iter().filter(|&&k| k < 4).count() == 2 {
                break d;
            }
            seed += 1;
        };
        let w = bspline_weights(&d, &cov, &spec).unwrap();
        assert_eq!(w.weights(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn single_poststratum_is_ratio_to_size() {
        let pop = toy_population(40);
        let cov = Covariate::new(pop.z()).unwrap();
        let d = draw_srswor(&pop, 8, 2).unwrap();
        let w = post_weights(&d, &cov, 0).unwrap();
        assert!(w.weights().iter().all(|&x| (x - 5.0).abs() < 1e-12));
    }

    #[test]
    fn empty_poststratum_errors() {
        let pop = Population::from_covariate(vec![0.0, 0.1, 0.2, 0.9, 1.0]).unwrap();
        let cov = Covariate::new(pop.z()).unwrap();
        let spec = SplineSpec::regression(1, 1).with_rule(KnotRule::Equidistant);
        let d = loop_draw(&pop, 2, |u| u.iter().all(|&k| k < 3));
        assert_eq!(
            bspline_weights(&d, &cov, &spec).unwrap_err(),
            Error::EmptyPoststratum(1)
        );
    }

    fn loop_draw(pop: &Population, n: usize, pred: impl Fn(&[usize]) -> bool) -> SampleDraw {
        (0..)
            .map(|s| draw_srswor(pop, n, s).unwrap())
            .find(|d| pred(d.units()))
            .unwrap()
    }

    #[test]
    fn empty_span_is_singular() {
        let pop = Population::from_covariate((0..20).map(|i| i as f64).collect()).unwrap();
        let cov = Covariate::new(pop.z()).unwrap();
        let spec = SplineSpec::regression(2, 3).with_rule(KnotRule::Equidistant);
        // No sampled unit beyond the second knot leaves B_4, B_5 without data.
        let d = loop_draw(&pop, 6, |u| u.iter().all(|&k| k < 9));
        assert!(matches!(
            bspline_weights(&d, &cov, &spec),
            Err(Error::SingularSystem { .. })
        ));
        // A penalty stabilizes the system.
        let pen = spec.with_penalty(1.0, 1);
        assert!(bspline_weights(&d, &cov, &pen).is_ok());
    }

    #[test]
    fn fit_constant_reproduced() {
        let pop = toy_population(100);
        let cov = Covariate::new(pop.z()).unwrap();
        let d = draw_srswor(&pop, 25, 9).unwrap();
        let spec = SplineSpec::regression(3, 2);
        let (theta, model) = fit_coefficients(&d, &cov, &spec, &[4.2; 25]).unwrap();
        for g in model.fitted_on_sample(&theta) {
            assert!((g - 4.2).abs() < 1e-10);
        }
        assert!((model.predict(pop.z()[0], &theta).unwrap() - 4.2).abs() < 1e-10);
    }

    #[test]
    fn order_one_fit_is_cell_mean() {
        // Two spans; θ̂_j is the HT-weighted mean inside span j.
        let pop = toy_population(50);
        let cov = Covariate::new(pop.z()).unwrap();
        let d = draw_srswor(&pop, 12, 5).unwrap();
        let spec = SplineSpec::regression(1, 1).with_rule(KnotRule::Equidistant);
        let v: Vec<f64> = (0..12).map(|i| (i * i) as f64).collect();
        let (theta, _) = fit_coefficients(&d, &cov, &spec, &v).unwrap();
        let z = cov.normalized();
        for cell in 0..2 {
            let members: Vec<usize> = (0..12)
                .filter(|&i| usize::from(z[d.units()[i]] >= 0.5) == cell)
                .collect();
            let mean = members.iter().map(|&i| v[i]).sum::<f64>() / members.len() as f64;
            assert!((theta[cell] - mean).abs() < 1e-10);
        }
    }

    #[test]
    fn penalty_shrinks_roughness() {
        let pop = toy_population(120);
        let cov = Covariate::new(pop.z()).unwrap();
        let d = draw_srswor(&pop, 40, 12).unwrap();
        let z = d.restrict(cov.normalized());
        let v: Vec<f64> = z.iter().map(|t| (6.0 * t).sin() + t).collect();
        let mut last = f64::INFINITY;
        for lambda in [0.0, 1.0, 10.0, 100.0] {
            let spec = SplineSpec::regression(2, 4)
                .with_rule(KnotRule::Equidistant)
                .with_penalty(lambda, 1);
            let (theta, _) = fit_coefficients(&d, &cov, &spec, &v).unwrap();
            let rough: f64 = (1..theta.len())
                .map(|j| (theta[j] - theta[j - 1]).powi(2))
                .sum();
            assert!(rough < last, "λ={lambda}: {rough} !< {last}");
            last = rough;
        }
    }

    #[test]
    fn calibration_to_basis_totals() {
        let pop = toy_population(300);
        let cov = Covariate::new(pop.z()).unwrap();
        let d = draw_srswor(&pop, 60, 77).unwrap();
        for m in 1..=3 {
            let spec = SplineSpec::regression(m, 3);
            let w = bspline_weights(&d, &cov, &spec).unwrap();
            let knots = w.model().unwrap().knots().unwrap().clone();
            for j in 0..knots.dim(m) {
                let pop_total: f64 = cov
                    .normalized()
                    .iter()
                    .map(|&t| basis_row(&knots, m, t).unwrap()[j])
                    .sum();
                let achieved: f64 = d
                    .units()
                    .iter()
                    .zip(w.weights())
                    .map(|(&k, w)| w * basis_row(&knots, m, cov.normalized()[k]).unwrap()[j])
                    .sum();
                assert!(rel(achieved, pop_total) < 1e-8);
            }
            assert!(w
                .diagnostics()
                .calibration_residuals
                .iter()
                .all(|r| r.abs() < 1e-8 * 300.0));
        }
    }

    #[test]
    fn penalized_and_projection_forms_agree_at_zero() {
        let pop = toy_population(250);
        let cov = Covariate::new(pop.z()).unwrap();
        let d = draw_srswor(&pop, 50, 8).unwrap();
        for m in 2..=4 {
            let spec = SplineSpec::regression(m, 3);
            let a = bspline_weights(&d, &cov, &spec).unwrap();
            let b = bspline_projection_weights(&d, &cov, &spec).unwrap();
            for (x, y) in a.weights().iter().zip(&b) {
                assert!(rel(*x, *y) < 1e-8);
            }
        }
    }

    #[test]
    fn difference_form_matches_weighted_sum() {
        let pop = toy_population(250);
        let cov = Covariate::new(pop.z()).unwrap();
        let d = draw_srswor(&pop, 50, 18).unwrap();
        let y: Vec<f64> = d
            .restrict(cov.normalized())
            .iter()
            .map(|t| 3.0 + (4.0 * t).exp())
            .collect();
        for spec in [
            SplineSpec::regression(2, 2),
            SplineSpec::regression(3, 4).with_penalty(0.5, 2),
        ] {
            let w = bspline_weights(&d, &cov, &spec).unwrap();
            let a = weighted_total(&w, &y).unwrap();
            let b = difference_form_total(&w, &y).unwrap();
            assert!((a - b).abs() <= 1e-10 * a.abs());
        }
    }

    #[test]
    fn truncated_power_fits_match_bsplines() {
        let pop = toy_population(150);
        let cov = Covariate::new(pop.z()).unwrap();
        let d = draw_srswor(&pop, 40, 6).unwrap();
        let z = d.restrict(cov.normalized());
        let y: Vec<f64> = z.iter().map(|t| (3.0 * t).cos()).collect();
        let spec = SplineSpec::regression(3, 3);
        let (theta, model) = fit_coefficients(&d, &cov, &spec, &y).unwrap();
        let fitted = model.fitted_on_sample(&theta);
        let knots = model.knots().unwrap();
        let q = knots.dim(3);
        let mut c = DMatrix::zeros(z.len(), q);
        for (i, &t) in z.iter().enumerate() {
            let row = truncated_power_row(knots, 3, t).unwrap();
            for j in 0..q {
                c[(i, j)] = row[j];
            }
        }
        // Weighted least squares in the truncated-power basis (π constant).
        let eta = (c.transpose() * &c)
            .lu()
            .solve(&(c.transpose() * DVector::from_vec(y.clone())))
            .unwrap();
        let other = &c * eta;
        for (a, b) in fitted.iter().zip(other.iter()) {
            assert!((a - b).abs() <= 1e-8 * (1.0 + a.abs()));
        }
    }
}
