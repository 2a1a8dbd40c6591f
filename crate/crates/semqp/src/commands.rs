//! Subcommand implementations. Each returns a [`Outcome`]; writing files
//! and choosing the exit status is left to the binary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use semqp_core::effects::{apply_intervention, enumerate_path_effects, moments, total_effects, Intervention, Moments};
use semqp_core::montecarlo::{compare, SimConfig};
use semqp_core::{build_mean_qp, build_variance_qp, linalg, solve_box_qp, SemModel};

use crate::error::{CliError, ExitKind};
use crate::modelfile::{resolve_target, CoefficientFile, EdgeSpec, ModelFile, Problem, Scale, TargetSpec, WeightSpec};
use crate::report::{
    EffectsReport, InputEcho, InterceptRow, ModelEcho, MomentsReport, PathsReport, QpReport, Report,
    SimulationReport, SolutionReport, TargetRow, VarianceRow,
};
use crate::simulate_parallel;

#[derive(Debug, Parser)]
#[command(name = "semqp", version, about = "Optimal interventions in linear structural equation models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Total effects and moments of a model.
    Analyze(Common),
    /// Choose covariate-to-treatment coefficients minimising output variance.
    OptimizeVariance(VarianceArgs),
    /// Choose treatment intercepts bringing output means onto targets.
    OptimizeMean(MeanArgs),
    /// List every directed path between two variables.
    Paths(PathsArgs),
    /// Check the analytic moments against a Monte Carlo simulation.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Model file (JSON).
    pub model: PathBuf,
    /// Write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VarianceArgs {
    #[command(flatten)]
    pub common: Common,
    /// Output weights, e.g. `y1=1,y2=0.5`. Overrides the file's `weights`.
    #[arg(long)]
    pub weights: Option<String>,
    /// Coefficients without a bounds entry are free instead of fixed.
    #[arg(long)]
    pub allow_unbounded: bool,
}

#[derive(Debug, Args)]
pub struct MeanArgs {
    #[command(flatten)]
    pub common: Common,
    /// Targets `output=value[:scale[:weight]]`, comma separated, scale
    /// `log` or `linear`. Overrides the file's `targets`.
    #[arg(long)]
    pub targets: Option<String>,
    /// JSON file with a `coefficients` array applied before optimising.
    #[arg(long)]
    pub apply_coefficients: Option<PathBuf>,
    /// Intercepts without a bounds entry are free instead of fixed.
    #[arg(long)]
    pub allow_unbounded: bool,
}

#[derive(Debug, Args)]
pub struct PathsArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub from: String,
    #[arg(long)]
    pub to: String,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Number of samples.
    #[arg(long, default_value_t = 1_000_000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Largest accepted |z| score.
    #[arg(long, default_value_t = 4.0)]
    pub z: f64,
    #[arg(long)]
    pub antithetic: bool,
}

/// A finished run: the report and the exit status it implies.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub report: Report,
    pub status: ExitKind,
    /// Printed to stderr when the status is not `Ok`.
    pub message: Option<String>,
}

impl Outcome {
    fn ok(report: Report) -> Self {
        Outcome {
            report,
            status: ExitKind::Ok,
            message: None,
        }
    }
}

impl Command {
    pub fn common(&self) -> &Common {
        match self {
            Command::Analyze(c) => c,
            Command::OptimizeVariance(a) => &a.common,
            Command::OptimizeMean(a) => &a.common,
            Command::Paths(a) => &a.common,
            Command::Simulate(a) => &a.common,
        }
    }
}

pub fn run(command: &Command) -> Result<Outcome, CliError> {
    match command {
        Command::Analyze(c) => analyze(c),
        Command::OptimizeVariance(a) => optimize_variance(a),
        Command::OptimizeMean(a) => optimize_mean(a),
        Command::Paths(a) => paths(a),
        Command::Simulate(a) => simulate(a),
    }
}

fn echo(path: &Path, model: &SemModel, flags: &[(&str, String)]) -> InputEcho {
    InputEcho {
        model_path: path.display().to_string(),
        flags: flags.iter().map(|(k, v)| (k.to_string(), v.clone())).collect::<BTreeMap<_, _>>(),
        model: ModelEcho::of(model),
    }
}

pub fn analyze(args: &Common) -> Result<Outcome, CliError> {
    let model = ModelFile::load(&args.model)?.model()?;
    let mut report = Report::new("analyze", echo(&args.model, &model, &[]));
    report.effects = Some(EffectsReport::of(&model, &total_effects(&model)?));
    report.moments = Some(MomentsReport::of(&model, &moments(&model)?));
    Ok(Outcome::ok(report))
}

/// `name=value,...`
pub fn parse_weights(text: &str) -> Result<Vec<WeightSpec>, CliError> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|item| {
            let (name, value) = item
                .split_once('=')
                .ok_or_else(|| CliError::parse(format!("--weights: expected name=value, got `{item}`")))?;
            let weight = value
                .trim()
                .parse::<f64>()
                .map_err(|e| CliError::parse(format!("--weights: `{value}`: {e}")))?;
            Ok(WeightSpec {
                output: name.trim().to_string(),
                weight,
            })
        })
        .collect()
}

/// `name=value[:scale[:weight]],...`
pub fn parse_targets(text: &str) -> Result<Vec<TargetSpec>, CliError> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|item| {
            let bad = |why: &str| CliError::parse(format!("--targets: `{item}`: {why}"));
            let (name, rest) = item.split_once('=').ok_or_else(|| bad("expected name=value"))?;
            let mut parts = rest.split(':');
            let value = parts
                .next()
                .unwrap_or_default()
                .trim()
                .parse::<f64>()
                .map_err(|e| bad(&e.to_string()))?;
            let scale = match parts.next().map(str::trim) {
                None | Some("log") => Scale::Log,
                Some("linear") => Scale::Linear,
                Some(other) => return Err(bad(&format!("unknown scale `{other}`"))),
            };
            let weight = match parts.next() {
                None => 1.0,
                Some(w) => w.trim().parse::<f64>().map_err(|e| bad(&e.to_string()))?,
            };
            if parts.next().is_some() {
                return Err(bad("too many fields"));
            }
            Ok(TargetSpec {
                output: name.trim().to_string(),
                value,
                scale,
                weight,
            })
        })
        .collect()
}

fn load_problem(path: &Path, allow_unbounded: bool) -> Result<Problem, CliError> {
    ModelFile::load(path)?.problem(allow_unbounded)
}

fn coefficient_list(model: &SemModel, coef: &linalg::Matrix) -> Vec<EdgeSpec> {
    let mut out = Vec::new();
    for (j, z) in model.covariates.iter().enumerate() {
        for (i, x) in model.treatments.iter().enumerate() {
            out.push(EdgeSpec {
                from: z.clone(),
                to: x.clone(),
                coef: coef[(i, j)],
            });
        }
    }
    out
}

fn kkt_outcome(report: Report, satisfied: bool) -> Outcome {
    if satisfied {
        Outcome::ok(report)
    } else {
        Outcome {
            report,
            status: ExitKind::Solver,
            message: Some("solution does not satisfy the KKT conditions".to_string()),
        }
    }
}

pub fn optimize_variance(args: &VarianceArgs) -> Result<Outcome, CliError> {
    let problem = load_problem(&args.common.model, args.allow_unbounded)?;
    let model = &problem.model;
    let weights = match &args.weights {
        Some(text) => {
            let w = parse_weights(text)?;
            for (k, spec) in w.iter().enumerate() {
                crate::modelfile::check_weight(model, spec, &format!("--weights[{k}]"))?;
            }
            w
        }
        None => problem.weights.clone(),
    };
    // every output with weight 1 unless weights are given
    let (outputs, values): (Vec<String>, Vec<f64>) = if weights.is_empty() {
        (model.outputs.clone(), vec![1.0; model.n_y()])
    } else {
        weights.iter().map(|w| (w.output.clone(), w.weight)).unzip()
    };

    let mut flags = vec![("allow_unbounded", args.allow_unbounded.to_string())];
    if let Some(w) = &args.weights {
        flags.push(("weights", w.clone()));
    }
    let mut report = Report::new("optimize-variance", echo(&args.common.model, model, &flags));
    let qp = build_variance_qp(model, &outputs, Some(&values), &problem.coef_bounds)?;
    report.qp = Some(QpReport::of(&qp));
    let sol = solve_box_qp(&qp)?;
    let (nx, nz) = (model.n_x(), model.n_z());
    let coef = linalg::unvec(&sol.alpha, nx, nz);
    let after = apply_intervention(model, &Intervention::coefficients(coef.clone()))?;
    let before_m = moments(model)?;
    let after_m = moments(&after)?;

    report.effects = Some(EffectsReport::of(model, &total_effects(model)?));
    report.effects_after = Some(EffectsReport::of(&after, &total_effects(&after)?));
    report.solution = Some(SolutionReport::of(&qp, &sol));
    report.coefficients = Some(coefficient_list(model, &coef));
    report.variance = Some(
        outputs
            .iter()
            .zip(&values)
            .map(|(name, w)| {
                let i = model.output_index(name).expect("checked by the builder");
                VarianceRow {
                    output: name.clone(),
                    weight: *w,
                    before: before_m.var_y[(i, i)],
                    after: after_m.var_y[(i, i)],
                }
            })
            .collect(),
    );
    report.moments = Some(MomentsReport::of(model, &before_m));
    report.moments_after = Some(MomentsReport::of(&after, &after_m));
    Ok(kkt_outcome(report, sol.kkt.satisfied))
}

pub fn optimize_mean(args: &MeanArgs) -> Result<Outcome, CliError> {
    let problem = load_problem(&args.common.model, args.allow_unbounded)?;
    let mut model = problem.model.clone();
    let mut flags = vec![("allow_unbounded", args.allow_unbounded.to_string())];
    if let Some(path) = &args.apply_coefficients {
        let coef = CoefficientFile::load(path)?.apply_to(&model)?;
        model = apply_intervention(&model, &Intervention::coefficients(coef))?;
        flags.push(("apply_coefficients", path.display().to_string()));
    }
    let targets = match &args.targets {
        Some(text) => {
            flags.push(("targets", text.clone()));
            parse_targets(text)?
                .iter()
                .enumerate()
                .map(|(k, t)| resolve_target(&model, t, &format!("--targets[{k}]")))
                .collect::<Result<Vec<_>, _>>()?
        }
        None => problem.targets.clone(),
    };
    if targets.is_empty() {
        return Err(CliError::validation("targets: none given in the model file or --targets"));
    }

    let mut report = Report::new("optimize-mean", echo(&args.common.model, &model, &flags));
    let mean_targets: Vec<_> = targets.iter().map(|t| t.to_mean_target()).collect();
    let qp = build_mean_qp(&model, &mean_targets, &problem.intercept_bounds)?;
    report.qp = Some(QpReport::of(&qp));
    let sol = solve_box_qp(&qp)?;
    let after = apply_intervention(&model, &Intervention::intercepts(sol.alpha.clone()))?;
    let before_m = moments(&model)?;
    let after_m = moments(&after)?;

    report.solution = Some(SolutionReport::of(&qp, &sol));
    report.intercepts = Some(
        model
            .treatments
            .iter()
            .enumerate()
            .map(|(i, t)| InterceptRow {
                treatment: t.clone(),
                before: model.intercept_x[i],
                after: sol.alpha[i],
            })
            .collect(),
    );
    report.targets = Some(
        targets
            .iter()
            .map(|t| {
                let i = model.output_index(&t.spec.output).expect("resolved target");
                let (b, a) = (before_m.mean_y[i], after_m.mean_y[i]);
                let linear = t.spec.scale == Scale::Linear;
                TargetRow {
                    output: t.spec.output.clone(),
                    scale: t.spec.scale,
                    value: t.spec.value,
                    model_value: t.model_value,
                    weight: t.spec.weight,
                    mean_before: b,
                    mean_after: a,
                    linear_before: linear.then(|| b.exp()),
                    linear_after: linear.then(|| a.exp()),
                }
            })
            .collect(),
    );
    report.moments = Some(MomentsReport::of(&model, &before_m));
    report.moments_after = Some(MomentsReport::of(&after, &after_m));
    Ok(kkt_outcome(report, sol.kkt.satisfied))
}

pub fn paths(args: &PathsArgs) -> Result<Outcome, CliError> {
    let model = ModelFile::load(&args.common.model)?.model()?;
    let flags = [("from", args.from.clone()), ("to", args.to.clone())];
    let mut report = Report::new("paths", echo(&args.common.model, &model, &flags));
    let found = enumerate_path_effects(&model, &args.from, &args.to)?;
    report.paths = Some(PathsReport::of(&args.from, &args.to, &found));
    Ok(Outcome::ok(report))
}

/// Options of the simulate command.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub config: SimConfig,
    pub z: f64,
}

/// Simulates `model` and compares against `analytic`, which the command
/// takes from [`moments`]; passing anything else is how the detector is
/// tested.
pub fn simulate_with(model: &SemModel, opts: &SimOptions, analytic: &Moments, input: InputEcho) -> Result<Outcome, CliError> {
    if opts.config.n_samples < 2 {
        return Err(CliError::validation(format!(
            "--n: need at least 2 samples, got {}",
            opts.config.n_samples
        )));
    }
    if !(opts.z > 0.0) {
        return Err(CliError::validation(format!("--z: must be positive, got {}", opts.z)));
    }
    let sampled = simulate_parallel(model, &opts.config)?;
    let cmp = compare(analytic, &sampled, opts.z);
    let mut report = Report::new("simulate", input);
    report.moments = Some(MomentsReport::of(model, analytic));
    report.simulation = Some(SimulationReport::of(
        model,
        &sampled,
        &cmp,
        opts.config.seed,
        opts.config.antithetic,
    ));
    if cmp.passed {
        Ok(Outcome::ok(report))
    } else {
        let worst = cmp.failures().count();
        Ok(Outcome {
            report,
            status: ExitKind::Mismatch,
            message: Some(format!(
                "{worst} entries exceed z = {} (max z {})",
                opts.z, cmp.max_z
            )),
        })
    }
}

pub fn simulate(args: &SimulateArgs) -> Result<Outcome, CliError> {
    let model = ModelFile::load(&args.common.model)?.model()?;
    let flags = [
        ("n", args.n.to_string()),
        ("seed", args.seed.to_string()),
        ("z", args.z.to_string()),
        ("antithetic", args.antithetic.to_string()),
    ];
    let opts = SimOptions {
        config: SimConfig {
            n_samples: args.n,
            seed: args.seed,
            antithetic: args.antithetic,
        },
        z: args.z,
    };
    let analytic = moments(&model)?;
    simulate_with(&model, &opts, &analytic, echo(&args.common.model, &model, &flags))
}
