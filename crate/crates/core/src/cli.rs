//! Command-line front end.
//!
//! Exit status: 0 stable (or success), 1 unstable or marginal, 2 input or
//! validation error, 3 numerical failure.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::analyzer::{
    self, grid, lifted_markov_generator, propagate_continuous_moments, propagate_discrete_moments,
    StabilityReport, SweepTable, Verdict,
};
use crate::error::{Error, Result};
use crate::expectation::QuadratureConfig;
use crate::io::{self, ModelFile, ModelKind};
use crate::kron_lift::MultiIndexBasis;
use crate::model::SemiMarkovModel;
use crate::simulator::{self, EnsembleOptions, NormKind};
use crate::stabilizer;

pub const EXIT_STABLE: i32 = 0;
pub const EXIT_UNSTABLE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "posjump",
    version,
    about = "Mean stability analysis, simulation and stabilization of positive jump linear systems"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a model file against the standing assumptions.
    Validate(ModelArgs),
    /// m-th mean stability of a semi-Markov or discrete-time model.
    Analyze(AnalyzeArgs),
    /// m-th mean stability of a Markov model (or a synthesis file's design).
    AnalyzeMarkov(AnalyzeArgs),
    /// Stability indicator over a parameter grid, with boundary brackets.
    Sweep(SweepArgs),
    /// Exact moment propagation.
    Moments(MomentsArgs),
    /// One sample path, or ensemble statistics with --paths.
    Simulate(SimulateArgs),
    /// Gain and switching-rate synthesis.
    Stabilize(StabilizeArgs),
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Model or problem file (JSON).
    #[arg(long)]
    pub model: PathBuf,
    /// Parameter binding `name=value` (repeatable).
    #[arg(long = "param", value_name = "NAME=VALUE")]
    pub params: Vec<String>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 1)]
    pub degree: usize,
    /// JSON report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// `name=grid(lo,hi,step)`; further `name=value` bindings may follow.
    #[arg(long = "param", value_name = "SPEC", required = true)]
    pub params: Vec<String>,
    #[arg(long, default_value_t = 1)]
    pub degree: usize,
    /// CSV table, or JSON (with crossings) when the name ends in `.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MomentsArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 1)]
    pub degree: usize,
    /// Number of switches (semi-Markov, discrete) or final time (Markov).
    #[arg(long, default_value_t = 10.0)]
    pub horizon: f64,
    /// Output spacing for Markov models (default horizon/100).
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NormArg {
    Euclidean,
    Manhattan,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 10.0)]
    pub horizon: f64,
    /// Output spacing (default horizon/1000).
    #[arg(long)]
    pub dt: Option<f64>,
    /// Ensemble size; omit for a single path.
    #[arg(long)]
    pub paths: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Moment order of the ensemble statistics.
    #[arg(long, default_value_t = 1)]
    pub degree: usize,
    #[arg(long, value_enum, default_value_t = NormArg::Euclidean)]
    pub norm: NormArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StabilizeArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Cap on the off-diagonal switching rates.
    #[arg(long)]
    pub qbar: Option<f64>,
    /// Penalty weight.
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, default_value_t = 20)]
    pub multistart: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON result.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(&cli),
        Err(e) => {
            let _ = e.print();
            match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => EXIT_INPUT,
            }
        }
    }
}

pub fn run(cli: &Cli) -> i32 {
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_INPUT
            }
        }
    }
}

fn dispatch(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Validate(a) => validate(a),
        Command::Analyze(a) => analyze(a, false),
        Command::AnalyzeMarkov(a) => analyze(a, true),
        Command::Sweep(a) => sweep(a),
        Command::Moments(a) => moments(a),
        Command::Simulate(a) => simulate(a),
        Command::Stabilize(a) => stabilize(a),
    }
}

fn load(args: &ModelArgs) -> Result<ModelFile> {
    let mut file = ModelFile::load(&args.model)?;
    for p in &args.params {
        let (name, value) = parse_binding(p)?;
        file.set_parameter(&name, value)?;
    }
    Ok(file)
}

fn parse_binding(spec: &str) -> Result<(String, f64)> {
    let (name, value) = spec
        .split_once('=')
        .ok_or_else(|| Error::InvalidArgument(format!("expected name=value, got `{spec}`")))?;
    let value = value
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::InvalidArgument(format!("bad value in `{spec}`")))?;
    Ok((name.trim().to_string(), value))
}

fn verdict_code(v: Verdict) -> i32 {
    match v {
        Verdict::Stable => EXIT_STABLE,
        Verdict::Unstable | Verdict::Marginal => EXIT_UNSTABLE,
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => io::write_atomic(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Checks a loaded file against the standing assumptions.
pub fn validate_file(file: &ModelFile) -> Result<()> {
    match &file.kind {
        ModelKind::SemiMarkov(_) => file.semi_markov()?.validate().into_result(),
        ModelKind::Markov(_) => file.markov()?.validate().into_result(),
        ModelKind::Discrete(_) => file.discrete()?.validate().into_result(),
        ModelKind::Synthesis(_) => {
            file.synthesis()?.validate()?;
            match file.synthesis()?.initial {
                Some(_) => file.markov()?.validate().into_result(),
                None => Ok(()),
            }
        }
    }
}

fn validate(a: &ModelArgs) -> Result<i32> {
    let file = load(a)?;
    validate_file(&file)?;
    match &file.kind {
        ModelKind::Synthesis(_) if file.synthesis()?.initial.is_none() => {
            println!("valid synthesis problem")
        }
        kind => println!("valid {} model", kind.name()),
    }
    Ok(EXIT_STABLE)
}

/// Analyzes `file` with the criterion matching its kind.
pub fn report_for(file: &ModelFile, degree: usize, markov: bool) -> Result<StabilityReport> {
    match (&file.kind, markov) {
        (ModelKind::SemiMarkov(_), false) => analyzer::analyze_semi_markov(
            &file.semi_markov()?,
            degree,
            &QuadratureConfig::default(),
        ),
        (ModelKind::Discrete(_), false) => analyzer::analyze_discrete(&file.discrete()?, degree),
        (ModelKind::Markov(_) | ModelKind::Synthesis(_), true) => {
            analyzer::analyze_markov(&file.markov()?, degree)
        }
        (kind, false) => Err(Error::InvalidArgument(format!(
            "`{}` files are analyzed with analyze-markov",
            kind.name()
        ))),
        (kind, true) => Err(Error::InvalidArgument(format!(
            "`{}` files are analyzed with analyze",
            kind.name()
        ))),
    }
}

fn analyze(a: &AnalyzeArgs, markov: bool) -> Result<i32> {
    let file = load(&a.model)?;
    let report = report_for(&file, a.degree, markov)?;
    let name = if report.criterion.is_schur() {
        "rho"
    } else {
        "eta"
    };
    println!(
        "{:?} m={} lifted_dim={} {name}={} normalized={} margin={} verdict={}",
        report.criterion,
        report.degree,
        report.lifted_dim,
        io::fmt_f64(report.indicator),
        io::fmt_f64(report.normalized_indicator),
        io::fmt_f64(report.margin),
        report.verdict.as_str()
    );
    if let Some(out) = &a.out {
        io::write_atomic(out, io::to_json(&report)?.as_bytes())?;
    }
    Ok(verdict_code(report.verdict))
}

fn sweep(a: &SweepArgs) -> Result<i32> {
    let mut file = ModelFile::load(&a.model)?;
    let mut grid_spec = None;
    for p in &a.params {
        if p.contains("grid(") {
            if grid_spec.is_some() {
                return Err(Error::InvalidArgument(
                    "only one grid parameter is supported".into(),
                ));
            }
            grid_spec = Some(io::parse_grid_spec(p)?);
        } else {
            let (name, value) = parse_binding(p)?;
            file.set_parameter(&name, value)?;
        }
    }
    let (name, lo, hi, step) = grid_spec.ok_or_else(|| {
        Error::InvalidArgument("sweep needs --param name=grid(lo,hi,step)".into())
    })?;
    file.with_parameter(&name, lo)?;
    let values = grid(lo, hi, step)?;
    let markov = matches!(file.kind, ModelKind::Markov(_) | ModelKind::Synthesis(_));
    let table: SweepTable = analyzer::sweep(&name, a.degree, &values, |v| {
        report_for(&file.with_parameter(&name, v)?, a.degree, markov)
    });
    for (lo, hi) in &table.crossings {
        eprintln!("boundary in [{}, {}]", io::fmt_f64(*lo), io::fmt_f64(*hi));
    }
    let failed = table.points.iter().filter(|p| p.error.is_some()).count();
    if failed > 0 {
        eprintln!("warning: {failed} grid point(s) failed");
    }
    let text = match &a.out {
        Some(p) if p.extension().is_some_and(|e| e == "json") => io::to_json(&table)?,
        _ => io::sweep_csv(&table),
    };
    emit(a.out.as_deref(), &text)?;
    Ok(if failed == table.points.len() {
        EXIT_NUMERICAL
    } else {
        EXIT_STABLE
    })
}

fn moments(a: &MomentsArgs) -> Result<i32> {
    let file = load(&a.model)?;
    if !(a.horizon >= 0.0) {
        return Err(Error::InvalidArgument("horizon must be nonnegative".into()));
    }
    let (text, verdict) = match &file.kind {
        ModelKind::Markov(_) | ModelKind::Synthesis(_) => {
            let model = file.markov()?;
            model.validate().into_result()?;
            let basis = MultiIndexBasis::new(model.dim(), a.degree)?;
            let gen = lifted_markov_generator(&model, &basis)?;
            let (x0, mode) = file.initial_condition(model.dim())?;
            let dt = a.dt.unwrap_or(a.horizon / 100.0);
            let times = simulator::output_grid(a.horizon, dt)?;
            let v = propagate_continuous_moments(&gen, &basis, mode, &x0, &times)?;
            let verdict = analyzer::analyze_markov(&model, a.degree)?.verdict;
            (io::moments_csv("t", &times, &v), verdict)
        }
        ModelKind::SemiMarkov(_) | ModelKind::Discrete(_) => {
            let k_max = a.horizon.round() as usize;
            let report = report_for(&file, a.degree, false)?;
            let dim = match &file.kind {
                ModelKind::SemiMarkov(_) => file.semi_markov()?.dim(),
                _ => file.discrete()?.dim(),
            };
            let basis = MultiIndexBasis::new(dim, a.degree)?;
            let (x0, mode) = file.initial_condition(dim)?;
            let v = propagate_discrete_moments(&report.lifted_matrix, &basis, mode, &x0, k_max)?;
            let steps: Vec<f64> = (0..=k_max).map(|k| k as f64).collect();
            (io::moments_csv("k", &steps, &v), report.verdict)
        }
    };
    emit(a.out.as_deref(), &text)?;
    Ok(verdict_code(verdict))
}

/// Semi-Markov model to simulate; Markov models run on their embedded
/// chain with exponential dwell times truncated beyond the horizon.
/// Model to simulate; Markov files use their embedded chain with cap `horizon + 1`.
pub fn simulation_model(
    file: &ModelFile,
    horizon: f64,
) -> Result<(SemiMarkovModel, Option<crate::model::MarkovModel>)> {
    match &file.kind {
        ModelKind::SemiMarkov(_) => Ok((file.semi_markov()?, None)),
        ModelKind::Markov(_) | ModelKind::Synthesis(_) => {
            let m = file.markov()?;
            m.validate().into_result()?;
            Ok((m.embedded_semi_markov(horizon + 1.0), Some(m)))
        }
        ModelKind::Discrete(_) => Err(Error::InvalidArgument(
            "discrete models have no continuous-time paths; use moments".into(),
        )),
    }
}

fn simulate(a: &SimulateArgs) -> Result<i32> {
    let file = load(&a.model)?;
    if !(a.horizon > 0.0) {
        return Err(Error::InvalidArgument("horizon must be positive".into()));
    }
    let (model, markov) = simulation_model(&file, a.horizon)?;
    model.validate().into_result()?;
    let (x0, mode) = file.initial_condition(model.dim())?;
    let dt = a.dt.unwrap_or(a.horizon / 1000.0);
    let text = match a.paths {
        None => {
            let path = simulator::simulate_path(&model, &x0, mode, a.horizon, dt, a.seed)?;
            if path.diverged {
                eprintln!("warning: path diverged");
            }
            io::path_csv(&path)
        }
        Some(paths) => {
            let norm = match a.norm {
                NormArg::Euclidean => NormKind::Euclidean,
                NormArg::Manhattan => NormKind::Manhattan,
            };
            let stats = simulator::estimate_mean_norm(
                &model,
                &x0,
                mode,
                a.degree,
                a.horizon,
                dt,
                paths,
                a.seed,
                EnsembleOptions {
                    norm,
                    lifted: false,
                },
            )?;
            if stats.divergence_warning() {
                eprintln!(
                    "warning: {} of {} paths diverged",
                    stats.diverged_paths, stats.paths
                );
            }
            // For m = 1 and the 1-norm, E‖x(t)‖₁ = ‖e^{T t} v₀‖₁ exactly.
            let exact = match (&markov, a.degree, norm) {
                (Some(m), 1, NormKind::Manhattan) => {
                    let basis = MultiIndexBasis::new(m.dim(), 1)?;
                    let gen = lifted_markov_generator(m, &basis)?;
                    let v = propagate_continuous_moments(&gen, &basis, mode, &x0, &stats.times)?;
                    Some(v.iter().map(|v| v.iter().sum()).collect::<Vec<f64>>())
                }
                _ => None,
            };
            io::ensemble_csv(&stats, exact.as_deref())
        }
    };
    emit(a.out.as_deref(), &text)?;
    Ok(EXIT_STABLE)
}

#[derive(Serialize)]
struct StabilizeOutput<'a> {
    #[serde(flatten)]
    result: &'a stabilizer::SynthesisResult,
    gamma: f64,
    qbar: Option<f64>,
    multistart: usize,
    seed: u64,
}

fn stabilize(a: &StabilizeArgs) -> Result<i32> {
    let file = load(&a.model)?;
    let mut problem = file.synthesis()?;
    if let Some(g) = a.gamma {
        problem.gamma = g;
    }
    if let Some(q) = a.qbar {
        problem.rate_cap = Some(q);
    }
    let result = stabilizer::solve(&problem, a.multistart, a.seed)?;
    println!(
        "eta={} feasible={} penalties(metzler={}, negative_rates={}, rate_excess={})",
        io::fmt_f64(result.eta),
        result.feasible,
        io::fmt_f64(result.penalties.metzler),
        io::fmt_f64(result.penalties.negative_rates),
        io::fmt_f64(result.penalties.rate_excess)
    );
    if let Some(out) = &a.out {
        let doc = StabilizeOutput {
            result: &result,
            gamma: problem.gamma,
            qbar: problem.rate_cap,
            multistart: a.multistart,
            seed: a.seed,
        };
        io::write_atomic(out, io::to_json(&doc)?.as_bytes())?;
    }
    Ok(if result.feasible && result.eta < 0.0 {
        EXIT_STABLE
    } else {
        EXIT_UNSTABLE
    })
}
