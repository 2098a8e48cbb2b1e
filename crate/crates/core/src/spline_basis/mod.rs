//! B-spline and truncated-power bases on [0, 1], knot placement and the
//! derivative penalty.
//!
//! Covariates are mapped onto the unit interval with [`normalize_covariate`]
//! before any basis evaluation. A spline of order `m` with `K` interior knots
//! spans a space of dimension `q = K + m`.

mod basis;
mod knots;
mod penalty;

pub use basis::{basis_matrix, basis_row, basis_row_sparse, truncated_power_row, SparseRow};
pub use knots::{build_knots, empirical_quantile, normalize_covariate, CovariateMap, KnotVector};
pub use penalty::{difference_operator, gauss_legendre, penalty_matrix, PenaltyMatrix};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where interior knots are placed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KnotRule {
    Equidistant,
    #[default]
    SampleQuantile,
    PopulationQuantile,
}

impl std::str::FromStr for KnotRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "equidistant" => Ok(KnotRule::Equidistant),
            "sample_quantile" | "sample" => Ok(KnotRule::SampleQuantile),
            "population_quantile" | "population" => Ok(KnotRule::PopulationQuantile),
            other => Err(Error::InvalidSpec(format!("unknown knot rule '{other}'"))),
        }
    }
}

/// Order, knot count, knot rule and penalty of a spline smoother.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplineSpec {
    pub order: usize,
    pub interior_knots: usize,
    #[serde(default)]
    pub knot_rule: KnotRule,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default = "default_penalty_order")]
    pub penalty_order: usize,
}

fn default_penalty_order() -> usize {
    1
}

impl SplineSpec {
    /// Unpenalized regression spline with knots at sample quantiles.
    pub fn regression(order: usize, interior_knots: usize) -> Self {
        Self {
            order,
            interior_knots,
            knot_rule: KnotRule::SampleQuantile,
            lambda: 0.0,
            penalty_order: 1,
        }
    }

    pub fn with_rule(mut self, rule: KnotRule) -> Self {
        self.knot_rule = rule;
        self
    }

    pub fn with_penalty(mut self, lambda: f64, penalty_order: usize) -> Self {
        self.lambda = lambda;
        self.penalty_order = penalty_order;
        self
    }

    /// Basis dimension `K + m` for the requested knot count.
    pub fn dim(&self) -> usize {
        self.interior_knots + self.order
    }

    pub fn is_penalized(&self) -> bool {
        self.lambda > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.order == 0 {
            return Err(Error::InvalidSpec("spline order must be at least 1".into()));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidSpec(format!(
                "penalty λ must be finite and ≥ 0, got {}",
                self.lambda
            )));
        }
        if self.is_penalized() {
            if self.penalty_order >= self.order {
                return Err(Error::PenaltyOrder {
                    penalty_order: self.penalty_order,
                    order: self.order,
                });
            }
            if self.penalty_order == 0 {
                return Err(Error::InvalidSpec(
                    "penalty order must be at least 1".into(),
                ));
            }
        }
        Ok(())
    }
}
