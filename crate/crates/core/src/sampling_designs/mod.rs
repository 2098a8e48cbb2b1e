//! Finite populations, SRSWOR and stratified SRSWOR draws, and first- and
//! second-order inclusion probabilities.
//!
//! Every draw is a pure function of `(population, design, seed)`. Monte Carlo
//! replicates derive independent streams from one master seed with
//! [`replicate_rng`].

mod population;

pub use population::Population;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Generator used for all sampling.
pub type SurveyRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SurveyRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream `index` of the generator keyed by `master`. Streams never overlap,
/// so replicate `i` sees the same numbers whatever order replicates run in.
pub fn replicate_rng(master: u64, index: u64) -> SurveyRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng
}

/// Sampling design over a population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Design {
    Srswor {
        n: usize,
    },
    /// Independent SRSWOR in each stratum, keyed by stratum label.
    Stratified {
        allocations: BTreeMap<String, usize>,
    },
    /// Poisson sampling with the given π_k; joints are π_k π_l.
    GivenProbabilities {
        pi: Vec<f64>,
    },
}

impl Design {
    pub fn draw<R: Rng + ?Sized>(
        &self,
        population: &Population,
        rng: &mut R,
    ) -> Result<SampleDraw> {
        match self {
            Design::Srswor { n } => srswor_with(population, *n, rng),
            Design::Stratified { allocations } => stratified_with(population, allocations, rng),
            Design::GivenProbabilities { pi } => poisson_with(population, pi, rng),
        }
    }

    /// Expected total sample size.
    pub fn sample_size(&self) -> f64 {
        match self {
            Design::Srswor { n } => *n as f64,
            Design::Stratified { allocations } => allocations.values().sum::<usize>() as f64,
            Design::GivenProbabilities { pi } => pi.iter().sum(),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Design::Srswor { n } => format!("SRSWOR(n={n})"),
            Design::Stratified { allocations } => {
                let parts: Vec<String> = allocations
                    .iter()
                    .map(|(h, n)| format!("{h}:{n}"))
                    .collect();
                format!("STSRSWOR({})", parts.join(","))
            }
            Design::GivenProbabilities { .. } => "Poisson(given π)".into(),
        }
    }
}

/// Per-stratum population and sample sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StratumSize {
    pub population: usize,
    pub sample: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum JointRule {
    Srswor {
        population: usize,
        sample: usize,
    },
    Stratified {
        stratum: Vec<usize>,
        sizes: Vec<StratumSize>,
    },
    Independent,
}

/// A realized sample: ascending unit indices into the population with
/// inclusion probabilities for every unit of U.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleDraw {
    units: Vec<usize>,
    pi: Vec<f64>,
    joint: JointRule,
}

impl SampleDraw {
    /// Every unit with certainty.
    pub fn census(population_size: usize) -> Self {
        Self {
            units: (0..population_size).collect(),
            pi: vec![1.0; population_size],
            joint: JointRule::Srswor {
                population: population_size,
                sample: population_size,
            },
        }
    }

    pub fn units(&self) -> &[usize] {
        &self.units
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn population_size(&self) -> usize {
        self.pi.len()
    }

    /// π_k for every unit of U.
    pub fn pi_all(&self) -> &[f64] {
        &self.pi
    }

    pub fn pi(&self, k: usize) -> Result<f64> {
        self.pi.get(k).copied().ok_or(Error::UnknownUnit(k))
    }

    /// π_k over the sampled units, aligned with [`units`](Self::units).
    pub fn pi_sample(&self) -> Vec<f64> {
        self.units.iter().map(|&k| self.pi[k]).collect()
    }

    /// Restricts population values to the sample.
    pub fn restrict(&self, values: &[f64]) -> Vec<f64> {
        self.units.iter().map(|&k| values[k]).collect()
    }

    /// Whether joint probabilities follow only an approximating rule.
    pub fn approximate_joints(&self) -> bool {
        matches!(self.joint, JointRule::Independent)
    }

    /// Per-stratum sizes under stratified sampling.
    pub fn stratum_sizes(&self) -> Option<&[StratumSize]> {
        match &self.joint {
            JointRule::Stratified { sizes, .. } => Some(sizes),
            _ => None,
        }
    }

    /// Stratum index of each sampled unit under stratified sampling.
    pub fn sample_strata(&self) -> Option<Vec<usize>> {
        match &self.joint {
            JointRule::Stratified { stratum, .. } => {
                Some(self.units.iter().map(|&k| stratum[k]).collect())
            }
            _ => None,
        }
    }

    pub fn is_srswor(&self) -> bool {
        matches!(self.joint, JointRule::Srswor { .. })
    }

    /// π_kl, with π_kk = π_k.
    pub fn joint_prob(&self, k: usize, l: usize) -> Result<f64> {
        let pk = self.pi(k)?;
        let pl = self.pi(l)?;
        if k == l {
            return Ok(pk);
        }
        Ok(match &self.joint {
            JointRule::Srswor { population, sample } => pair_probability(*population, *sample),
            JointRule::Stratified { stratum, sizes } => {
                if stratum[k] == stratum[l] {
                    let s = sizes[stratum[k]];
                    pair_probability(s.population, s.sample)
                } else {
                    pk * pl
                }
            }
            JointRule::Independent => pk * pl,
        })
    }

    /// Δ_kl = π_kl − π_k π_l.
    pub fn delta(&self, k: usize, l: usize) -> Result<f64> {
        Ok(self.joint_prob(k, l)? - self.pi(k)? * self.pi(l)?)
    }
}

/// n(n−1) / (N(N−1)) for two distinct units under SRSWOR.
fn pair_probability(population: usize, sample: usize) -> f64 {
    if population < 2 {
        return 0.0;
    }
    (sample as f64 * (sample as f64 - 1.0)) / (population as f64 * (population as f64 - 1.0))
}

/// First `n` positions of a partial Fisher–Yates shuffle of `pool`, sorted.
fn choose<R: Rng + ?Sized>(pool: &mut [usize], n: usize, rng: &mut R) -> Vec<usize> {
    let len = pool.len();
    for i in 0..n {
        let j = rng.gen_range(i..len);
        pool.swap(i, j);
    }
    let mut chosen = pool[..n].to_vec();
    chosen.sort_unstable();
    chosen
}

fn srswor_with<R: Rng + ?Sized>(
    population: &Population,
    n: usize,
    rng: &mut R,
) -> Result<SampleDraw> {
    let big_n = population.len();
    if n == 0 || n > big_n {
        return Err(Error::InvalidDesign(format!(
            "SRSWOR sample size must satisfy 1 ≤ n ≤ N (n = {n}, N = {big_n})"
        )));
    }
    let mut pool: Vec<usize> = (0..big_n).collect();
    let units = choose(&mut pool, n, rng);
    let rate = n as f64 / big_n as f64;
    Ok(SampleDraw {
        units,
        pi: vec![rate; big_n],
        joint: JointRule::Srswor {
            population: big_n,
            sample: n,
        },
    })
}

fn stratified_with<R: Rng + ?Sized>(
    population: &Population,
    allocations: &BTreeMap<String, usize>,
    rng: &mut R,
) -> Result<SampleDraw> {
    let strata = population.strata().ok_or_else(|| {
        Error::MissingStratum(population.ids().first().cloned().unwrap_or_default())
    })?;
    let members = population.stratum_members().unwrap_or_default();
    let labels = population.stratum_labels();
    for label in allocations.keys() {
        if !labels.contains(label) {
            return Err(Error::InvalidDesign(format!(
                "allocation for unknown stratum '{label}'"
            )));
        }
    }
    let mut pi = vec![0.0; population.len()];
    let mut sizes = Vec::with_capacity(labels.len());
    let mut units = Vec::new();
    // Strata are drawn in label order so the stream consumption is canonical.
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| labels[a].cmp(&labels[b]));
    let mut chosen: Vec<Vec<usize>> = vec![Vec::new(); labels.len()];
    for &h in &order {
        let label = &labels[h];
        let n_h = *allocations
            .get(label)
            .ok_or_else(|| Error::MissingAllocation(label.clone()))?;
        let big_n_h = members[h].len();
        if n_h == 0 || n_h > big_n_h {
            return Err(Error::InvalidDesign(format!(
                "stratum '{label}': allocation must satisfy 1 ≤ n_h ≤ N_h (n_h = {n_h}, N_h = {big_n_h})"
            )));
        }
        let mut pool = members[h].clone();
        chosen[h] = choose(&mut pool, n_h, rng);
    }
    for (h, m) in members.iter().enumerate() {
        let n_h = allocations[&labels[h]];
        let rate = n_h as f64 / m.len() as f64;
        for &k in m {
            pi[k] = rate;
        }
        sizes.push(StratumSize {
            population: m.len(),
            sample: n_h,
        });
        units.extend_from_slice(&chosen[h]);
    }
    units.sort_unstable();
    Ok(SampleDraw {
        units,
        pi,
        joint: JointRule::Stratified {
            stratum: strata.to_vec(),
            sizes,
        },
    })
}

fn poisson_with<R: Rng + ?Sized>(
    population: &Population,
    pi: &[f64],
    rng: &mut R,
) -> Result<SampleDraw> {
    if pi.len() != population.len() {
        return Err(Error::LengthMismatch {
            expected: population.len(),
            got: pi.len(),
        });
    }
    if pi.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
        return Err(Error::InvalidDesign(
            "inclusion probabilities must lie in (0, 1]".into(),
        ));
    }
    let units: Vec<usize> = (0..pi.len())
        .filter(|&k| rng.gen::<f64>() < pi[k])
        .collect();
    if units.is_empty() {
        return Err(Error::InvalidDesign(
            "Poisson draw selected no units".into(),
        ));
    }
    Ok(SampleDraw {
        units,
        pi: pi.to_vec(),
        joint: JointRule::Independent,
    })
}

/// Simple random sample of `n` units without replacement.
pub fn draw_srswor(population: &Population, n: usize, seed: u64) -> Result<SampleDraw> {
    srswor_with(population, n, &mut rng_from_seed(seed))
}

/// Independent SRSWOR within each stratum.
pub fn draw_stratified(
    population: &Population,
    allocations: &BTreeMap<String, usize>,
    seed: u64,
) -> Result<SampleDraw> {
    stratified_with(population, allocations, &mut rng_from_seed(seed))
}

/// π_kl for a drawn sample; symmetric with π_kk = π_k.
pub fn joint_prob(draw: &SampleDraw, k: usize, l: usize) -> Result<f64> {
    draw.joint_prob(k, l)
}
