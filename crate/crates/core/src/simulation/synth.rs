use rand::Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal, WeightedIndex};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling_designs::{rng_from_seed, Population};
use crate::variance::inverse_normal;

/// Wage-like population generator.
///
/// The covariate `z` is a previous-year wage drawn from a lognormal
/// truncated at a quantile of the untruncated law. The study variable is
/// `y = slope·z + noise·√z·ε`, redrawn until positive, and the ratio
/// denominator is `x = ratio_slope·z + ratio_noise·√z·ε'` likewise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub size: usize,
    pub log_mean: f64,
    pub log_sd: f64,
    /// Values of z above this quantile of the lognormal are redrawn.
    pub truncation_quantile: f64,
    pub slope: f64,
    pub noise: f64,
    pub ratio_slope: f64,
    pub ratio_noise: f64,
    /// Number of region-like strata; 0 for none.
    pub strata: usize,
    /// Shift of the log-wage mean per region index.
    pub region_log_shift: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            size: 19_378,
            log_mean: 7.3,
            log_sd: 0.5,
            truncation_quantile: 0.995,
            slope: 1.0,
            noise: 9.5,
            ratio_slope: 0.8,
            ratio_noise: 6.0,
            strata: 0,
            region_log_shift: 0.05,
            seed: 2000,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.size < 2 {
            return bad("population size must be at least 2");
        }
        if !(self.log_sd > 0.0) || !self.log_mean.is_finite() {
            return bad("lognormal parameters must be finite with positive sd");
        }
        if !(self.truncation_quantile > 0.5 && self.truncation_quantile <= 1.0) {
            return bad("truncation quantile must lie in (0.5, 1]");
        }
        if !(self.slope > 0.0) || !(self.ratio_slope > 0.0) {
            return bad("slopes must be positive");
        }
        if !(self.noise >= 0.0) || !(self.ratio_noise >= 0.0) {
            return bad("noise scales must be non-negative");
        }
        if self.strata > 26 {
            return bad("at most 26 strata");
        }
        Ok(())
    }
}

/// Region shares for `count` strata, decreasing from the largest region.
fn region_shares(count: usize) -> Vec<f64> {
    (0..count)
        .map(|h| 1.0 + 0.5 * (count - h) as f64 / count as f64)
        .collect()
}

fn positive_draw<R: Rng>(rng: &mut R, mean: f64, scale: f64) -> f64 {
    loop {
        let e: f64 = StandardNormal.sample(rng);
        let v = mean + scale * e;
        if v > 0.0 {
            return v;
        }
    }
}

/// Generates a population with covariate `z` and study variables `y`, `x`.
pub fn synth_population(config: &SynthConfig) -> Result<Population> {
    config.validate()?;
    let mut rng = rng_from_seed(config.seed);
    let regions = if config.strata > 0 {
        let dist = WeightedIndex::new(region_shares(config.strata))
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        (0..config.size).map(|_| dist.sample(&mut rng)).collect()
    } else {
        vec![0; config.size]
    };
    let mut z = Vec::with_capacity(config.size);
    for &h in &regions {
        let mu = config.log_mean + config.region_log_shift * h as f64;
        let law =
            LogNormal::new(mu, config.log_sd).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let cap = if config.truncation_quantile < 1.0 {
            (mu + config.log_sd * inverse_normal(config.truncation_quantile)).exp()
        } else {
            f64::INFINITY
        };
        let value = loop {
            let v = law.sample(&mut rng);
            if v <= cap {
                break v;
            }
        };
        z.push(value);
    }
    let y: Vec<f64> = z
        .iter()
        .map(|&zk| positive_draw(&mut rng, config.slope * zk, config.noise * zk.sqrt()))
        .collect();
    let x: Vec<f64> = z
        .iter()
        .map(|&zk| {
            positive_draw(
                &mut rng,
                config.ratio_slope * zk,
                config.ratio_noise * zk.sqrt(),
            )
        })
        .collect();
    let mut population = Population::from_covariate(z)?
        .with_variable("y", y)?
        .with_variable("x", x)?;
    if config.strata > 0 {
        let labels: Vec<String> = regions.iter().map(|&h| format!("R{}", h + 1)).collect();
        population = population.with_strata(&labels)?;
    }
    Ok(population)
}
