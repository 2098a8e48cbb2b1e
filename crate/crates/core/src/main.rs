use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use survey_splines::calibration_weights::{build_weights, Covariate, WeightFamily};
use survey_splines::estimation::{estimate_parameter, EstimationOptions};
use survey_splines::functionals::Functional;
use survey_splines::sampling_designs::{rng_from_seed, Design, Population, SampleDraw};
use survey_splines::simulation::{
    format_coverage_table, format_table, run_monte_carlo, synth_population, write_metrics_csv,
    DesignSpec, LinearizationWeights, SimulationPlan, SynthConfig,
};
use survey_splines::spline_basis::{basis_row, build_knots, KnotRule, KnotVector, SplineSpec};
use survey_splines::variance::VarianceMethod;

type CliResult<T> = std::result::Result<T, Box<dyn std::error::Error>>;

#[derive(Parser, Debug)]
#[command(
    name = "survey-splines",
    version,
    about = "Penalized B-spline model-assisted survey estimation"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by every subcommand. For `simulate`, a flag given here
/// overrides the plan file.
#[derive(Args, Debug)]
struct GlobalArgs {
    /// Spline order m (2 = piecewise linear); default 2.
    #[arg(long, global = true)]
    order: Option<usize>,
    /// Number of interior knots K; default 2.
    #[arg(long, global = true)]
    knots: Option<usize>,
    /// equidistant, sample_quantile or population_quantile.
    #[arg(long, global = true)]
    knot_rule: Option<KnotRule>,
    /// Smoothing parameter λ ≥ 0; default 0.
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// Difference order of the penalty; default 1.
    #[arg(long, global = true)]
    penalty_order: Option<usize>,
    /// Sampling design.
    #[arg(long, global = true, value_enum)]
    design: Option<DesignKind>,
    /// Sample size (per stratum for the stratified design); default 500.
    #[arg(long, global = true)]
    n: Option<usize>,
    /// Master seed; default 1.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Confidence level; default 0.95.
    #[arg(long, global = true)]
    level: Option<f64>,
    /// closed or double_sum.
    #[arg(long, global = true)]
    variance_method: Option<VarianceMethod>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DesignKind {
    Srswor,
    Stratified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FamilyKind {
    Ht,
    Greg,
    Post,
    Bs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LinearizeWith {
    Ht,
    Same,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evaluate the B-spline basis on an equidistant grid of [0, 1].
    Basis {
        /// Grid size.
        #[arg(long, default_value_t = 101)]
        grid: usize,
        /// Population CSV used to place quantile knots; without it knots
        /// are equidistant.
        #[arg(long)]
        population: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw a sample and write its weights.
    Weights {
        #[arg(long)]
        population: PathBuf,
        #[arg(long, value_enum, default_value_t = FamilyKind::Bs)]
        family: FamilyKind,
        /// Weights CSV; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Diagnostics JSON; stderr if omitted.
        #[arg(long)]
        diagnostics: Option<PathBuf>,
    },
    /// Draw a sample and estimate parameters with variance and intervals.
    Estimate {
        #[arg(long)]
        population: PathBuf,
        #[arg(long, value_enum, default_value_t = FamilyKind::Bs)]
        family: FamilyKind,
        /// total, mean, ratio, gini, median, quantile(p), poverty.
        #[arg(long = "parameter", value_delimiter = ',', default_value = "mean")]
        parameters: Vec<Functional>,
        #[arg(long, default_value = "y")]
        variable: String,
        /// Denominator variable of the ratio.
        #[arg(long, default_value = "x")]
        denominator: String,
        /// Count units strictly below the poverty line.
        #[arg(long)]
        strict_poverty: bool,
        /// Weights used inside the linearized variables.
        #[arg(long, value_enum, default_value_t = LinearizeWith::Ht)]
        linearize_with: LinearizeWith,
        /// Write per-unit linearized values, fits and residuals as CSV.
        #[arg(long)]
        emit_linearized: Option<PathBuf>,
        /// Report JSON; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a Monte Carlo study described by a TOML plan.
    Simulate {
        #[arg(long)]
        plan: PathBuf,
        /// Metrics CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Write a synthetic wage-like population CSV.
    Synth {
        #[arg(long, default_value_t = SynthConfig::default().size)]
        size: usize,
        /// Number of region strata; 0 for none.
        #[arg(long, default_value_t = 0)]
        strata: usize,
        /// Noise scale of the study variable.
        #[arg(long, default_value_t = SynthConfig::default().noise)]
        noise: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl GlobalArgs {
    fn spec(&self) -> SplineSpec {
        SplineSpec::regression(self.order.unwrap_or(2), self.knots.unwrap_or(2))
            .with_rule(self.knot_rule.unwrap_or_default())
            .with_penalty(self.lambda.unwrap_or(0.0), self.penalty_order.unwrap_or(1))
    }

    fn family(&self, kind: FamilyKind) -> WeightFamily {
        match kind {
            FamilyKind::Ht => WeightFamily::Ht,
            FamilyKind::Greg => WeightFamily::Greg,
            FamilyKind::Post => WeightFamily::Post {
                interior_knots: self.knots.unwrap_or(2),
            },
            FamilyKind::Bs => WeightFamily::BSpline { spec: self.spec() },
        }
    }

    fn design_spec(&self) -> DesignSpec {
        let n = self.n.unwrap_or(500);
        match self.design.unwrap_or(DesignKind::Srswor) {
            DesignKind::Srswor => DesignSpec::Srswor { n },
            DesignKind::Stratified => DesignSpec::Stratified {
                allocations: Default::default(),
                per_stratum: Some(n),
            },
        }
    }

    fn draw(&self, population: &Population) -> CliResult<(Design, SampleDraw)> {
        let design = self.design_spec().resolve(population)?;
        let mut rng = rng_from_seed(self.seed.unwrap_or(1));
        let draw = design.draw(population, &mut rng)?;
        info!("drew {} units with {}", draw.len(), design.label());
        Ok((design, draw))
    }

    fn apply_to_plan(&self, plan: &mut SimulationPlan) {
        if let Some(k) = self.knots {
            plan.knots = vec![k];
        }
        if let Some(rule) = self.knot_rule {
            plan.knot_rule = rule;
        }
        if let Some(lambda) = self.lambda {
            plan.lambda = lambda;
        }
        if let Some(p) = self.penalty_order {
            plan.penalty_order = p;
        }
        if self.design.is_some() || self.n.is_some() {
            plan.design = self.design_spec();
        }
        if let Some(seed) = self.seed {
            plan.seed = seed;
        }
        if let Some(level) = self.level {
            plan.level = level;
        }
        if let Some(method) = self.variance_method {
            plan.variance_method = method;
        }
    }
}

fn output(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| format!("{}: {e}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn run_basis(
    global: &GlobalArgs,
    grid: usize,
    population: Option<&Path>,
    out: Option<&Path>,
) -> CliResult<()> {
    if grid < 2 {
        return Err("grid needs at least 2 points".into());
    }
    let spec = global.spec();
    spec.validate()?;
    let knots = match population {
        Some(path) => {
            let pop = Population::from_csv_path(path)?;
            let cov = Covariate::new(pop.z())?;
            build_knots(&spec, cov.normalized())?
        }
        None => KnotVector::equidistant(spec.interior_knots),
    };
    let mut w = csv::Writer::from_writer(output(out)?);
    let mut header = vec!["z".to_string()];
    header.extend((1..=spec.dim()).map(|j| format!("b{j}")));
    w.write_record(&header)?;
    for i in 0..grid {
        let z = i as f64 / (grid - 1) as f64;
        let row = basis_row(&knots, spec.order, z)?;
        let mut record = vec![z.to_string()];
        record.extend(row.iter().map(f64::to_string));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

fn run_weights(
    global: &GlobalArgs,
    population: &Path,
    family: FamilyKind,
    out: Option<&Path>,
    diagnostics: Option<&Path>,
) -> CliResult<()> {
    let pop = Population::from_csv_path(population)?;
    let cov = Covariate::new(pop.z())?;
    let (_, draw) = global.draw(&pop)?;
    let weights = build_weights(&draw, &cov, &global.family(family))?;
    let mut w = csv::Writer::from_writer(output(out)?);
    w.write_record(["id", "pi", "weight", "family"])?;
    let label = weights.family().label();
    for ((&k, &pi), &wk) in weights
        .units()
        .iter()
        .zip(weights.pi())
        .zip(weights.weights())
    {
        w.write_record([
            pop.ids()[k].as_str(),
            &pi.to_string(),
            &wk.to_string(),
            &label,
        ])?;
    }
    w.flush()?;
    let json = serde_json::to_string_pretty(&weights.diagnostics())?;
    match diagnostics {
        Some(p) => std::fs::write(p, json + "\n").map_err(|e| format!("{}: {e}", p.display()))?,
        None => eprintln!("{json}"),
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_estimate(
    global: &GlobalArgs,
    population: &Path,
    family: FamilyKind,
    parameters: &[Functional],
    variable: &str,
    denominator: &str,
    strict_poverty: bool,
    linearize_with: LinearizeWith,
    emit_linearized: Option<&Path>,
    out: Option<&Path>,
) -> CliResult<()> {
    let pop = Population::from_csv_path(population)?;
    let cov = Covariate::new(pop.z())?;
    let (design, draw) = global.draw(&pop)?;
    let weights = build_weights(&draw, &cov, &global.family(family))?;
    let y = draw.restrict(pop.variable(variable)?);
    let options = EstimationOptions {
        level: global.level.unwrap_or(0.95),
        variance_method: global.variance_method.unwrap_or_default(),
        linearize_with_ht: linearize_with == LinearizeWith::Ht,
        ..Default::default()
    };
    let mut reports = Vec::new();
    let mut audit_writer = match emit_linearized {
        Some(p) => {
            let mut w = csv::Writer::from_writer(output(Some(p))?);
            w.write_record(["id", "parameter", "linearized", "fitted", "residual"])?;
            Some(w)
        }
        None => None,
    };
    for parameter in parameters {
        let functional = match *parameter {
            Functional::PovertyRate {
                fraction, level, ..
            } => Functional::PovertyRate {
                fraction,
                level,
                strict: strict_poverty,
            },
            other => other,
        };
        let x = match functional {
            Functional::Ratio => Some(draw.restrict(pop.variable(denominator)?)),
            _ => None,
        };
        let (report, audit) = estimate_parameter(
            &draw,
            &design.label(),
            &weights,
            &functional,
            &y,
            x.as_deref(),
            &options,
        )?;
        if let (Some(w), Some(a)) = (audit_writer.as_mut(), audit) {
            for i in 0..a.units.len() {
                w.write_record([
                    pop.ids()[a.units[i]].clone(),
                    report.parameter.clone(),
                    a.linearized[i].to_string(),
                    a.fitted[i].to_string(),
                    a.residuals[i].to_string(),
                ])?;
            }
        }
        reports.push(report);
    }
    if let Some(mut w) = audit_writer {
        w.flush()?;
    }
    let mut sink = output(out)?;
    serde_json::to_writer_pretty(&mut sink, &reports)?;
    writeln!(sink)?;
    Ok(())
}

fn run_simulate(global: &GlobalArgs, plan_path: &Path, csv_path: Option<&Path>) -> CliResult<()> {
    let mut plan = SimulationPlan::from_path(plan_path)?;
    global.apply_to_plan(&mut plan);
    if let Some(order) = global.order {
        info!("--order is ignored by simulate; the roster in the plan sets orders ({order} given)");
    }
    plan.validate()?;
    let population = plan.load_population()?;
    info!(
        "running {} replicates on N = {}",
        plan.replicates,
        population.len()
    );
    let table = run_monte_carlo(&plan, &population)?;
    let mut stdout = io::stdout().lock();
    write!(stdout, "{}", format_table(&table))?;
    writeln!(stdout)?;
    write!(stdout, "{}", format_coverage_table(&table))?;
    if plan.linearization == LinearizationWeights::Same {
        writeln!(
            stdout,
            "(linearized variables use each estimator's own weights)"
        )?;
    }
    if let Some(p) = csv_path {
        write_metrics_csv(&table, output(Some(p))?)?;
    }
    Ok(())
}

fn run_synth(
    global: &GlobalArgs,
    size: usize,
    strata: usize,
    noise: f64,
    out: Option<&Path>,
) -> CliResult<()> {
    let mut config = SynthConfig {
        size,
        strata,
        noise,
        ..Default::default()
    };
    if let Some(seed) = global.seed {
        config.seed = seed;
    }
    let population = synth_population(&config)?;
    population.write_csv(output(out)?)?;
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Basis {
            grid,
            population,
            out,
        } => run_basis(g, *grid, population.as_deref(), out.as_deref()),
        Command::Weights {
            population,
            family,
            out,
            diagnostics,
        } => run_weights(
            g,
            population,
            *family,
            out.as_deref(),
            diagnostics.as_deref(),
        ),
        Command::Estimate {
            population,
            family,
            parameters,
            variable,
            denominator,
            strict_poverty,
            linearize_with,
            emit_linearized,
            out,
        } => run_estimate(
            g,
            population,
            *family,
            parameters,
            variable,
            denominator,
            *strict_poverty,
            *linearize_with,
            emit_linearized.as_deref(),
            out.as_deref(),
        ),
        Command::Simulate { plan, csv } => run_simulate(g, plan, csv.as_deref()),
        Command::Synth {
            size,
            strata,
            noise,
            out,
        } => run_synth(g, *size, *strata, *noise, out.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
