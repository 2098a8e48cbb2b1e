use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;

use super::synth::{synth_population, SynthConfig};
use crate::calibration_weights::WeightFamily;
use crate::error::{Error, Result};
use crate::functionals::Functional;
use crate::linearization::BandwidthRule;
use crate::sampling_designs::{Design, Population};
use crate::spline_basis::{KnotRule, SplineSpec};
use crate::variance::VarianceMethod;

/// An estimator in the roster; knot-based kinds expand over the plan's knot
/// counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    Ht,
    Greg,
    Post,
    BSpline { order: usize },
}

impl EstimatorKind {
    pub fn label(&self) -> String {
        match self {
            EstimatorKind::Ht => "HT".into(),
            EstimatorKind::Greg => "GREG".into(),
            EstimatorKind::Post => "POST".into(),
            EstimatorKind::BSpline { order } => format!("BS({order})"),
        }
    }

    pub fn uses_knots(&self) -> bool {
        matches!(self, EstimatorKind::Post | EstimatorKind::BSpline { .. })
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let upper = s.trim().to_ascii_uppercase();
        match upper.as_str() {
            "HT" => return Ok(EstimatorKind::Ht),
            "GREG" => return Ok(EstimatorKind::Greg),
            "POST" => return Ok(EstimatorKind::Post),
            _ => {}
        }
        let order = upper
            .strip_prefix("BS")
            .map(|rest| rest.trim_matches(|c| c == '(' || c == ')'))
            .and_then(|digits| digits.parse::<usize>().ok())
            .filter(|&m| m >= 1)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown estimator '{s}'")))?;
        Ok(EstimatorKind::BSpline { order })
    }
}

/// One roster entry at a specific knot count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorCell {
    pub kind: EstimatorKind,
    pub family: WeightFamily,
}

impl EstimatorCell {
    pub fn label(&self) -> String {
        self.kind.label()
    }

    pub fn knots(&self) -> Option<usize> {
        self.family.interior_knots()
    }
}

/// Which weights estimate the parameters embedded in linearized variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearizationWeights {
    #[default]
    Ht,
    /// The estimator's own weights.
    Same,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PopulationSource {
    File(PathBuf),
    Synthetic(SynthConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub enum DesignSpec {
    Srswor {
        n: usize,
    },
    /// Either explicit allocations or the same size in every stratum.
    Stratified {
        allocations: BTreeMap<String, usize>,
        per_stratum: Option<usize>,
    },
}

impl DesignSpec {
    pub fn resolve(&self, population: &Population) -> Result<Design> {
        match self {
            DesignSpec::Srswor { n } => Ok(Design::Srswor { n: *n }),
            DesignSpec::Stratified {
                allocations,
                per_stratum,
            } => {
                let mut alloc = allocations.clone();
                if let Some(n_h) = per_stratum {
                    for label in population.stratum_labels() {
                        alloc.entry(label.clone()).or_insert(*n_h);
                    }
                }
                if alloc.is_empty() {
                    return Err(Error::InvalidConfig(
                        "stratified design needs allocations".into(),
                    ));
                }
                Ok(Design::Stratified { allocations: alloc })
            }
        }
    }
}

/// A complete Monte Carlo study.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationPlan {
    pub population: PopulationSource,
    pub design: DesignSpec,
    pub estimators: Vec<EstimatorKind>,
    pub knots: Vec<usize>,
    pub knot_rule: KnotRule,
    pub lambda: f64,
    pub penalty_order: usize,
    pub parameters: Vec<Functional>,
    pub study_variable: String,
    pub ratio_denominator: String,
    pub replicates: usize,
    pub level: f64,
    pub seed: u64,
    pub variance_method: VarianceMethod,
    pub linearization: LinearizationWeights,
    pub bandwidth: BandwidthRule,
}

impl Default for SimulationPlan {
    fn default() -> Self {
        Self {
            population: PopulationSource::Synthetic(SynthConfig::default()),
            design: DesignSpec::Srswor { n: 500 },
            estimators: vec![
                EstimatorKind::Ht,
                EstimatorKind::Greg,
                EstimatorKind::Post,
                EstimatorKind::BSpline { order: 2 },
                EstimatorKind::BSpline { order: 3 },
            ],
            knots: vec![2, 4],
            knot_rule: KnotRule::SampleQuantile,
            lambda: 0.0,
            penalty_order: 1,
            parameters: vec![
                Functional::Mean,
                Functional::Gini,
                Functional::poverty_rate(),
            ],
            study_variable: "y".into(),
            ratio_denominator: "x".into(),
            replicates: 1000,
            level: 0.95,
            seed: 1,
            variance_method: VarianceMethod::Closed,
            linearization: LinearizationWeights::Ht,
            bandwidth: BandwidthRule::Silverman,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanFile {
    population: Option<PopulationFile>,
    design: Option<DesignFile>,
    estimators: Option<Vec<String>>,
    knots: Option<Vec<usize>>,
    knot_rule: Option<String>,
    lambda: Option<f64>,
    penalty_order: Option<usize>,
    parameters: Option<Vec<String>>,
    study_variable: Option<String>,
    ratio_denominator: Option<String>,
    replicates: Option<usize>,
    level: Option<f64>,
    seed: Option<u64>,
    variance_method: Option<String>,
    linearization: Option<LinearizationWeights>,
    bandwidth: Option<f64>,
    strict_poverty: Option<bool>,
}

#[derive(Debug, Deserialize)]
struct PopulationFile {
    path: Option<PathBuf>,
    #[serde(flatten)]
    synthetic: SynthConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DesignFile {
    kind: String,
    n: Option<usize>,
    per_stratum: Option<usize>,
    #[serde(default)]
    allocations: BTreeMap<String, usize>,
}

fn parse_with<T: FromStr<Err = Error>>(raw: Option<String>, fallback: T) -> Result<T> {
    raw.map_or(Ok(fallback), |s| s.parse())
}

impl SimulationPlan {
    /// Parses a TOML plan; unspecified keys take the defaults.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: PlanFile =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let base = SimulationPlan::default();
        let population = match raw.population {
            None => base.population,
            Some(PopulationFile {
                path: Some(path), ..
            }) => PopulationSource::File(path),
            Some(PopulationFile {
                path: None,
                synthetic,
            }) => PopulationSource::Synthetic(synthetic),
        };
        let design = match raw.design {
            None => base.design,
            Some(d) => match d.kind.to_ascii_lowercase().as_str() {
                "srswor" => DesignSpec::Srswor {
                    n: d.n
                        .ok_or_else(|| Error::InvalidConfig("srswor design needs n".into()))?,
                },
                "stratified" | "stsrswor" | "stsi" => DesignSpec::Stratified {
                    allocations: d.allocations,
                    per_stratum: d.per_stratum,
                },
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown design kind '{other}'"
                    )))
                }
            },
        };
        let estimators = match raw.estimators {
            None => base.estimators,
            Some(list) => list.iter().map(|s| s.parse()).collect::<Result<_>>()?,
        };
        let strict = raw.strict_poverty.unwrap_or(false);
        let parameters = match raw.parameters {
            None => base.parameters,
            Some(list) => list
                .iter()
                .map(|s| {
                    s.parse::<Functional>().map(|f| match f {
                        Functional::PovertyRate {
                            fraction, level, ..
                        } => Functional::PovertyRate {
                            fraction,
                            level,
                            strict,
                        },
                        other => other,
                    })
                })
                .collect::<Result<_>>()?,
        };
        let plan = SimulationPlan {
            population,
            design,
            estimators,
            knots: raw.knots.unwrap_or(base.knots),
            knot_rule: parse_with(raw.knot_rule, base.knot_rule)?,
            lambda: raw.lambda.unwrap_or(base.lambda),
            penalty_order: raw.penalty_order.unwrap_or(base.penalty_order),
            parameters,
            study_variable: raw.study_variable.unwrap_or(base.study_variable),
            ratio_denominator: raw.ratio_denominator.unwrap_or(base.ratio_denominator),
            replicates: raw.replicates.unwrap_or(base.replicates),
            level: raw.level.unwrap_or(base.level),
            seed: raw.seed.unwrap_or(base.seed),
            variance_method: parse_with(raw.variance_method, base.variance_method)?,
            linearization: raw.linearization.unwrap_or(base.linearization),
            bandwidth: raw.bandwidth.map_or(base.bandwidth, BandwidthRule::Fixed),
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
        let mut plan = Self::from_toml_str(&text)?;
        // Relative population paths resolve against the plan's directory.
        if let PopulationSource::File(p) = &plan.population {
            if p.is_relative() {
                if let Some(dir) = path.as_ref().parent() {
                    plan.population = PopulationSource::File(dir.join(p));
                }
            }
        }
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.replicates == 0 {
            return bad("replicate count must be at least 1".into());
        }
        if self.estimators.is_empty() {
            return bad("estimator roster is empty".into());
        }
        if !self.estimators.contains(&EstimatorKind::Ht) {
            return bad("the roster must include HT, the RRMSE reference".into());
        }
        if self.parameters.is_empty() {
            return bad("no parameters to estimate".into());
        }
        if self.estimators.iter().any(|e| e.uses_knots()) && self.knots.is_empty() {
            return bad("knot-based estimators need at least one knot count".into());
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return bad(format!("confidence level {} outside (0, 1)", self.level));
        }
        for cell in self.cells() {
            if let Some(spec) = cell.family.spline_spec() {
                spec.validate()?;
            }
        }
        Ok(())
    }

    /// The roster expanded over knot counts, in roster order.
    pub fn cells(&self) -> Vec<EstimatorCell> {
        let mut cells = Vec::new();
        for &kind in &self.estimators {
            match kind {
                EstimatorKind::Ht => cells.push(EstimatorCell {
                    kind,
                    family: WeightFamily::Ht,
                }),
                EstimatorKind::Greg => cells.push(EstimatorCell {
                    kind,
                    family: WeightFamily::Greg,
                }),
                EstimatorKind::Post => {
                    for &k in &self.knots {
                        cells.push(EstimatorCell {
                            kind,
                            family: WeightFamily::Post { interior_knots: k },
                        });
                    }
                }
                EstimatorKind::BSpline { order } => {
                    for &k in &self.knots {
                        let mut spec = SplineSpec::regression(order, k).with_rule(self.knot_rule);
                        if order > 1 && self.lambda > 0.0 {
                            spec = spec.with_penalty(self.lambda, self.penalty_order);
                        }
                        cells.push(EstimatorCell {
                            kind,
                            family: WeightFamily::BSpline { spec },
                        });
                    }
                }
            }
        }
        cells
    }

    pub fn load_population(&self) -> Result<Population> {
        match &self.population {
            PopulationSource::File(path) => Population::from_csv_path(path),
            PopulationSource::Synthetic(config) => synth_population(config),
        }
    }
}
