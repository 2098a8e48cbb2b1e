//! Design-based Monte Carlo studies: synthetic populations, replicate
//! execution over an estimator roster, and RB / RRMSE / coverage summaries.

mod plan;
mod report;
mod synth;

pub use plan::{
    DesignSpec, EstimatorCell, EstimatorKind, LinearizationWeights, PopulationSource,
    SimulationPlan,
};
pub use report::{format_coverage_table, format_table, write_metrics_csv};
pub use synth::{synth_population, SynthConfig};

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::calibration_weights::{build_weights, ht_weights, Covariate, WeightSet};
use crate::error::{Error, Result};
use crate::functionals::{Functional, WeightedMeasure};
use crate::linearization::{linearize, ResidualFit};
use crate::sampling_designs::{replicate_rng, Design, Population, SampleDraw};
use crate::spline_basis::empirical_quantile;
use crate::variance::{confidence_interval, estimate_variance, ResidualSource};

/// Monte Carlo summary of one (parameter, estimator, K) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub parameter: String,
    pub estimator: String,
    pub knots: Option<usize>,
    pub truth: f64,
    /// Relative bias in percent, or the absolute bias when the truth is 0.
    pub rb: f64,
    pub rb_absolute: bool,
    /// Root-MSE as a percentage of HT's, over replicates where both succeeded.
    pub rrmse: f64,
    /// Percentage of usable intervals containing the truth.
    pub coverage: f64,
    pub negative_variances: usize,
    pub failures: usize,
    pub variance_failures: usize,
    pub replicates_used: usize,
    pub mean_runtime_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsTable {
    pub replicates: usize,
    pub design: String,
    pub level: f64,
    pub rows: Vec<MetricRow>,
}

impl MetricsTable {
    pub fn row(
        &self,
        parameter: &str,
        estimator: &str,
        knots: Option<usize>,
    ) -> Option<&MetricRow> {
        self.rows
            .iter()
            .find(|r| r.parameter == parameter && r.estimator == estimator && r.knots == knots)
    }

    /// The table with timings zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> Self {
        let mut out = self.clone();
        out.rows.iter_mut().for_each(|r| r.mean_runtime_ms = 0.0);
        out
    }
}

/// What one estimator produced for one parameter in one replicate.
#[derive(Debug, Clone, Copy, PartialEq)]
struct ParamOutcome {
    estimate: f64,
    /// `Some(covered)` when a non-negative variance was available.
    covered: Option<bool>,
    negative: bool,
    variance_failed: bool,
}

#[derive(Debug, Clone)]
struct CellOutcome {
    runtime_ms: f64,
    params: Vec<Option<ParamOutcome>>,
}

/// Everything a replicate needs that does not change between replicates.
struct Context<'a> {
    plan: &'a SimulationPlan,
    population: &'a Population,
    design: Design,
    covariate: Covariate,
    y: &'a [f64],
    x: Option<&'a [f64]>,
    truths: Vec<f64>,
    cells: Vec<EstimatorCell>,
}

fn sample_measure(
    weights: &WeightSet,
    draw: &SampleDraw,
    ctx: &Context,
    f: &Functional,
) -> Result<WeightedMeasure> {
    let m = WeightedMeasure::from_weights(weights, &draw.restrict(ctx.y))?;
    match (f, ctx.x) {
        (Functional::Ratio, Some(x)) => m.with_denominator(draw.restrict(x)),
        (Functional::Ratio, None) => {
            Err(Error::UnknownVariable(ctx.plan.ratio_denominator.clone()))
        }
        _ => Ok(m),
    }
}

fn evaluate_cell(
    ctx: &Context,
    draw: &SampleDraw,
    weights: &WeightSet,
    shared_linearized: &[Option<Vec<f64>>],
) -> Vec<Option<ParamOutcome>> {
    ctx.plan
        .parameters
        .iter()
        .enumerate()
        .map(|(p, f)| {
            let measure = sample_measure(weights, draw, ctx, f).ok()?;
            let estimate = f.evaluate(&measure).ok()?;
            let linearized = match ctx.plan.linearization {
                LinearizationWeights::Ht => shared_linearized[p].clone(),
                LinearizationWeights::Same => linearize(f, &measure, ctx.plan.bandwidth)
                    .ok()
                    .map(|u| u.values),
            };
            let variance = linearized.and_then(|u| {
                let fit = ResidualFit::from_weights(weights, &u).ok()?;
                estimate_variance(draw, &fit.residuals, ctx.plan.variance_method)
                    .ok()
                    .map(|v| v.with_source(ResidualSource::Linearization))
            });
            let outcome = match variance {
                None => ParamOutcome {
                    estimate,
                    covered: None,
                    negative: false,
                    variance_failed: true,
                },
                Some(v) if v.negative => ParamOutcome {
                    estimate,
                    covered: None,
                    negative: true,
                    variance_failed: false,
                },
                Some(v) => {
                    let covered = confidence_interval(estimate, v.value, ctx.plan.level)
                        .ok()
                        .map(|(lo, hi)| lo <= ctx.truths[p] && ctx.truths[p] <= hi);
                    ParamOutcome {
                        estimate,
                        covered,
                        negative: false,
                        variance_failed: covered.is_none(),
                    }
                }
            };
            Some(outcome)
        })
        .collect()
}

fn run_replicate(ctx: &Context, index: usize) -> Result<Vec<CellOutcome>> {
    let mut rng = replicate_rng(ctx.plan.seed, index as u64);
    let draw = ctx.design.draw(ctx.population, &mut rng)?;
    let ht = ht_weights(&draw);
    let shared: Vec<Option<Vec<f64>>> = ctx
        .plan
        .parameters
        .iter()
        .map(|f| {
            let m = sample_measure(&ht, &draw, ctx, f).ok()?;
            linearize(f, &m, ctx.plan.bandwidth).ok().map(|u| u.values)
        })
        .collect();
    Ok(ctx
        .cells
        .iter()
        .map(|cell| {
            let start = Instant::now();
            let params = match build_weights(&draw, &ctx.covariate, &cell.family) {
                Ok(w) => evaluate_cell(ctx, &draw, &w, &shared),
                Err(e) => {
                    log::debug!("replicate {index}: {} failed: {e}", cell.label());
                    vec![None; ctx.plan.parameters.len()]
                }
            };
            CellOutcome {
                runtime_ms: start.elapsed().as_secs_f64() * 1e3,
                params,
            }
        })
        .collect())
}

/// Runs the plan's replicates on `population` and summarizes them.
pub fn run_monte_carlo(plan: &SimulationPlan, population: &Population) -> Result<MetricsTable> {
    plan.validate()?;
    let design = plan.design.resolve(population)?;
    let y = population.variable(&plan.study_variable)?;
    let x = if plan.parameters.contains(&Functional::Ratio) {
        Some(population.variable(&plan.ratio_denominator)?)
    } else {
        None
    };
    let truths = plan
        .parameters
        .iter()
        .map(|f| {
            let mut m = WeightedMeasure::unit(y.to_vec())?;
            if let (Functional::Ratio, Some(x)) = (f, x) {
                m = m.with_denominator(x.to_vec())?;
            }
            f.evaluate(&m)
        })
        .collect::<Result<Vec<f64>>>()?;
    let ctx = Context {
        plan,
        population,
        design,
        covariate: Covariate::new(population.z())?,
        y,
        x,
        truths,
        cells: plan.cells(),
    };
    let outcomes: Vec<Vec<CellOutcome>> = (0..plan.replicates)
        .into_par_iter()
        .map(|i| run_replicate(&ctx, i))
        .collect::<Result<_>>()?;
    Ok(summarize(&ctx, &outcomes))
}

fn summarize(ctx: &Context, outcomes: &[Vec<CellOutcome>]) -> MetricsTable {
    let ht_cell = ctx
        .cells
        .iter()
        .position(|c| c.kind == EstimatorKind::Ht)
        .unwrap_or(0);
    let mut rows = Vec::new();
    for (p, f) in ctx.plan.parameters.iter().enumerate() {
        let theta = ctx.truths[p];
        for (c, cell) in ctx.cells.iter().enumerate() {
            let mut bias_sum = 0.0;
            let mut used = 0usize;
            let mut failures = 0usize;
            let (mut sq, mut sq_ht) = (0.0, 0.0);
            let (mut covered, mut intervals) = (0usize, 0usize);
            let (mut negative, mut variance_failures) = (0usize, 0usize);
            let mut runtime = 0.0;
            for rep in outcomes {
                runtime += rep[c].runtime_ms;
                let Some(o) = rep[c].params[p] else {
                    failures += 1;
                    continue;
                };
                used += 1;
                bias_sum += o.estimate - theta;
                if let Some(h) = rep[ht_cell].params[p] {
                    sq += (o.estimate - theta).powi(2);
                    sq_ht += (h.estimate - theta).powi(2);
                }
                if o.negative {
                    negative += 1;
                } else if o.variance_failed {
                    variance_failures += 1;
                }
                if let Some(hit) = o.covered {
                    intervals += 1;
                    covered += usize::from(hit);
                }
            }
            let rb_absolute = theta == 0.0;
            let mean_bias = if used > 0 {
                bias_sum / used as f64
            } else {
                f64::NAN
            };
            rows.push(MetricRow {
                parameter: f.name(),
                estimator: cell.label(),
                knots: cell.knots(),
                truth: theta,
                rb: if rb_absolute {
                    mean_bias
                } else {
                    100.0 * mean_bias / theta
                },
                rb_absolute,
                rrmse: if c == ht_cell {
                    100.0
                } else {
                    100.0 * sq.sqrt() / sq_ht.sqrt()
                },
                coverage: if intervals > 0 {
                    100.0 * covered as f64 / intervals as f64
                } else {
                    f64::NAN
                },
                negative_variances: negative,
                failures,
                variance_failures,
                replicates_used: used,
                mean_runtime_ms: runtime / outcomes.len().max(1) as f64,
            });
        }
    }
    MetricsTable {
        replicates: ctx.plan.replicates,
        design: ctx.design.label(),
        level: ctx.plan.level,
        rows,
    }
}

/// Kolmogorov-type distance between the normalized measures `a/N̂_a` and
/// `b/N̂_b` over indicators `1{y ≤ c}`. The `c` grid is the pooled support
/// when it has at most `grid_size` points, else its type-1 quantiles at
/// levels i/(grid_size − 1).
pub fn tv_proxy_distance(a: &WeightedMeasure, b: &WeightedMeasure, grid_size: usize) -> f64 {
    let mut pooled: Vec<f64> = a.values().iter().chain(b.values()).copied().collect();
    pooled.sort_by(|x, y| x.total_cmp(y));
    pooled.dedup();
    if pooled.is_empty() {
        return 0.0;
    }
    let grid: Vec<f64> = if grid_size >= pooled.len() || grid_size < 2 {
        pooled
    } else {
        let g = grid_size - 1;
        (0..=g)
            .map(|i| empirical_quantile(&pooled, i as f64 / g as f64))
            .collect()
    };
    let fa = normalized_cdf(a, &grid);
    let fb = normalized_cdf(b, &grid);
    fa.iter()
        .zip(&fb)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Normalized CDF of `m` at each ascending grid point.
fn normalized_cdf(m: &WeightedMeasure, grid: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..m.len()).collect();
    order.sort_by(|&i, &j| m.values()[i].total_cmp(&m.values()[j]));
    let mass = m.total_mass();
    let mut out = Vec::with_capacity(grid.len());
    let mut running = 0.0;
    let mut next = 0;
    for &c in grid {
        while next < order.len() && m.values()[order[next]] <= c {
            running += m.masses()[order[next]];
            next += 1;
        }
        out.push(if mass == 0.0 { 0.0 } else { running / mass });
    }
    out
}
