//! Command-line front end.
//!
//! Exit codes: 0 success, 1 a checked condition does not hold, 2 usage or
//! input error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::categorical::CategoryValue;
use crate::covariates::{
    backward_row_limit, read_covariates_csv, simulate_joint, ConstantFamily, CovariateGenerator, LogisticFamily,
    TransitionFamily,
};
use crate::error::{Error, Result};
use crate::inference::{fit_newton, LogitDesign, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::mixing::{coupling_experiment, gamma_star, phi_bound};
use crate::models::{default_burn_in, simulate, transition_matrix, ModelSpec, SeriesPath, StateSpace};
use crate::rng::DEFAULT_SEED;
use crate::stability::{
    check_linear_feedback, check_nonlinear_contraction, check_summability, coupling_constants, lipschitz_profile,
    threshold_alpha,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "catseries", version, about = "Categorical time series under the multinomial-logit link")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a path and write it as CSV (t, y, lambda_k, z_k) or JSON.
    Simulate(SimulateArgs),
    /// Check the stationarity conditions of a model; exits 1 when they fail.
    CheckStationarity(ModelArgs),
    /// Coupling constants, return probabilities and φ-mixing bounds as JSON.
    MixingBound(MixingArgs),
    /// Monte-Carlo coupling of two chains from different pasts against the exact bound.
    CouplingDemo(CouplingArgs),
    /// Maximum-likelihood fit of a covariate_logistic model.
    Fit(FitArgs),
    /// Stationary law of the lag-window chain as a backward row limit.
    StationaryDist(StationaryArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GeneratorName {
    Iid,
    Ar1,
    Shift,
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Model JSON file.
    #[arg(long)]
    model: PathBuf,
    /// Write output here instead of stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CovariateArgs {
    /// Covariate CSV (t, z_1, …); generated when absent.
    #[arg(long)]
    covariates: Option<PathBuf>,
    /// Covariate process used when no file is given.
    #[arg(long, value_enum, default_value = "iid")]
    generator: GeneratorName,
    /// AR(1) coefficient.
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    phi: f64,
    /// AR(1) innovation standard deviation.
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Moving-sum window of the shift generator.
    #[arg(long, default_value_t = 4)]
    window: usize,
}

impl CovariateArgs {
    fn generator(&self) -> Result<CovariateGenerator> {
        match self.generator {
            GeneratorName::Iid => Ok(CovariateGenerator::iid_gaussian()),
            GeneratorName::Ar1 => CovariateGenerator::gaussian_ar1(self.phi, self.sigma),
            GeneratorName::Shift => CovariateGenerator::bernoulli_shift(self.window),
        }
    }

    fn read(&self) -> Result<Option<Vec<Vec<f64>>>> {
        self.covariates.as_deref().map(|p| read_covariates_csv(fs::File::open(p)?)).transpose()
    }
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: ModelArgs,
    /// Number of retained steps.
    #[arg(long)]
    n: usize,
    /// Discarded initial steps; derived from the contraction certificate when absent.
    #[arg(long)]
    burn_in: Option<usize>,
    /// Tolerance for the derived burn-in.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    #[command(flatten)]
    cov: CovariateArgs,
}

#[derive(Debug, Args)]
struct MixingArgs {
    #[command(flatten)]
    common: ModelArgs,
    /// Last index of γ* computed exactly.
    #[arg(long, default_value_t = 200)]
    n_max: usize,
    /// Lags at which to report the φ-mixing bound.
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 5, 10, 20, 50, 100])]
    at: Vec<usize>,
}

#[derive(Debug, Args)]
struct CouplingArgs {
    #[command(flatten)]
    common: ModelArgs,
    /// First past, newest first, e.g. `1,2`; defaults to all category 1.
    #[arg(long, value_delimiter = ',')]
    x_past: Option<Vec<usize>>,
    /// Second past, newest first; defaults to all reference category.
    #[arg(long, value_delimiter = ',')]
    y_past: Option<Vec<usize>>,
    #[arg(long, default_value_t = 20)]
    n: usize,
    #[arg(long, default_value_t = 10_000)]
    reps: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Model template JSON; its parameters are the starting point.
    #[command(flatten)]
    common: ModelArgs,
    /// Data CSV with a `y` column and `z_k` columns for covariates.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    max_iter: usize,
    /// Start from zero instead of the template parameters.
    #[arg(long)]
    zero_init: bool,
}

#[derive(Debug, Args)]
struct StationaryArgs {
    #[command(flatten)]
    common: ModelArgs,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 10_000)]
    max_depth: usize,
    /// Length of the generated covariate path (newest last).
    #[arg(long, default_value_t = 2000)]
    length: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[command(flatten)]
    cov: CovariateArgs,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let target: &mut dyn Write = if e.use_stderr() { err } else { out };
            let _ = write!(target, "{}", e.render());
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_CHECK_FAILED,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::ContractionFailed(_)
        | Error::NotSummable(_)
        | Error::CertificateNotReached { .. }
        | Error::Separation { .. }
        | Error::SingularHessian { .. } => EXIT_CHECK_FAILED,
        _ => EXIT_USAGE,
    }
}

fn load_model(path: &Path) -> Result<ModelSpec> {
    ModelSpec::from_json(&fs::read_to_string(path)?)
}

fn emit(output: Option<&Path>, out: &mut dyn Write, bytes: &[u8]) -> Result<()> {
    match output {
        Some(p) => fs::write(p, bytes)?,
        None => out.write_all(bytes)?,
    }
    Ok(())
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_vec_pretty(value)?;
    s.push(b'\n');
    Ok(s)
}

fn execute(command: Command, out: &mut dyn Write) -> Result<bool> {
    match command {
        Command::Simulate(a) => cmd_simulate(a, out),
        Command::CheckStationarity(a) => cmd_check(a, out),
        Command::MixingBound(a) => cmd_mixing(a, out),
        Command::CouplingDemo(a) => cmd_coupling(a, out),
        Command::Fit(a) => cmd_fit(a, out),
        Command::StationaryDist(a) => cmd_stationary(a, out),
    }
}

fn cmd_simulate(a: SimulateArgs, out: &mut dyn Write) -> Result<bool> {
    let model = load_model(&a.common.model)?;
    let burn_in = a.burn_in.unwrap_or_else(|| default_burn_in(&model, a.tol));
    let path = if model.covariate_dim() > 0 {
        match a.cov.read()? {
            Some(z) => simulate(&model, a.n, burn_in, None, a.seed, Some(&z))?,
            None => simulate_joint(&a.cov.generator()?, &model, a.n, burn_in, a.seed)?,
        }
    } else {
        simulate(&model, a.n, burn_in, None, a.seed, None)?
    };
    let bytes = match a.format {
        Format::Csv => {
            let mut buf = Vec::new();
            path.write_csv(&mut buf)?;
            buf
        }
        Format::Json => json_bytes(&path_json(&model, &path, burn_in))?,
    };
    emit(a.common.output.as_deref(), out, &bytes)?;
    Ok(true)
}

fn path_json(model: &ModelSpec, path: &SeriesPath, burn_in: usize) -> Value {
    json!({
        "family": model.family(),
        "seed": path.seed,
        "n": path.len(),
        "burn_in": burn_in,
        "frequencies": path.frequencies(model.n_categories()),
        "y": path.y.iter().map(|y| y.index()).collect::<Vec<_>>(),
        "lambda": path.lambda.iter().map(|l| l.as_slice().to_vec()).collect::<Vec<_>>(),
        "z": path.z,
    })
}

#[derive(Debug, Default, Serialize)]
struct CheckReport {
    family: &'static str,
    pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    rho: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha_sum: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    eta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    m_bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    c: Option<f64>,
    gamma: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    weighted_sum: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    positivity_order: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    message: Option<String>,
}

/// Number of γ entries printed in reports.
const REPORT_GAMMA_LEN: usize = 50;

fn stability_report(model: &ModelSpec) -> Result<CheckReport> {
    let mut r = CheckReport { family: model.family(), ..Default::default() };
    match model {
        ModelSpec::LinearFeedback(m) => match check_linear_feedback(m) {
            Ok(c) => {
                r.pass = c.pass;
                r.rho = Some(c.rho);
                r.kappa = c.kappa;
                r.k = c.k;
            }
            Err(Error::ContractionFailed(msg)) => {
                r.message = Some(msg);
                return Ok(r);
            }
            Err(e) => return Err(e),
        },
        ModelSpec::ThresholdBinary(m) => {
            let c = check_nonlinear_contraction(&[threshold_alpha(m.beta1, m.beta2)], &[m.alpha.abs()])?;
            r.pass = c.pass;
            r.alpha_sum = Some(c.alpha_sum);
        }
        ModelSpec::CovariateLogistic(m) if m.covariate_dim > 0 => {
            r.pass = true;
            r.positivity_order = Some(m.q.max(1));
            r.message = Some("products of q transition matrices are strictly positive for every covariate path".into());
            return Ok(r);
        }
        _ => {
            let s = check_summability(&lipschitz_profile(model)?);
            r.pass = s.pass;
            r.weighted_sum = Some(s.value);
        }
    }
    if r.pass {
        let c = coupling_constants(model)?;
        r.eta = Some(c.eta);
        r.m_bound = Some(c.m_bound);
        r.c = c.c;
        r.gamma = c.gamma.values.iter().take(REPORT_GAMMA_LEN).copied().collect();
        if r.kappa.is_none() {
            r.kappa = c.kappa;
            r.k = c.k;
        }
    }
    Ok(r)
}

fn cmd_check(a: ModelArgs, out: &mut dyn Write) -> Result<bool> {
    let model = load_model(&a.model)?;
    let report = stability_report(&model)?;
    emit(a.output.as_deref(), out, &json_bytes(&report)?)?;
    Ok(report.pass)
}

fn cmd_mixing(a: MixingArgs, out: &mut dyn Write) -> Result<bool> {
    let model = load_model(&a.common.model)?;
    let constants = coupling_constants(&model)?;
    let gs = gamma_star(&constants.gamma, a.n_max);
    let mut phi = Map::new();
    let mut ok = true;
    let mut message = None;
    for n in &a.at {
        match phi_bound(&gs, *n) {
            Ok(v) => {
                phi.insert(n.to_string(), json!(v));
            }
            Err(e @ Error::NotSummable(_)) => {
                ok = false;
                message = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let report = json!({
        "family": model.family(),
        "eta": constants.eta,
        "gamma": constants.gamma.values.iter().take(REPORT_GAMMA_LEN).collect::<Vec<_>>(),
        "gamma_tail_rate": constants.gamma.tail_rate,
        "gamma_star": gs.values,
        "phi_bound": if ok { Value::Object(phi) } else { Value::Null },
        "message": message,
    });
    emit(a.common.output.as_deref(), out, &json_bytes(&report)?)?;
    Ok(ok)
}

fn parse_past(labels: Option<Vec<usize>>, default: usize, len: usize, n: usize) -> Result<Vec<CategoryValue>> {
    match labels {
        Some(v) => v.into_iter().map(|i| CategoryValue::new(i, n)).collect(),
        None => (0..len).map(|_| CategoryValue::new(default, n)).collect(),
    }
}

fn cmd_coupling(a: CouplingArgs, out: &mut dyn Write) -> Result<bool> {
    let model = load_model(&a.common.model)?;
    let n = model.n_categories();
    let len = model.y_order().max(1);
    let x = parse_past(a.x_past, 1, len, n)?;
    let y = parse_past(a.y_past, n, len, n)?;
    let r = coupling_experiment(&model, &x, &y, a.n, a.reps, a.seed)?;
    let bytes = match a.format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["k", "P_T_le_k", "P_S_le_k"])?;
            for (k, (t, s)) in r.t_cdf.iter().zip(&r.s_cdf).enumerate() {
                w.write_record([k.to_string(), t.to_string(), s.to_string()])?;
            }
            w.into_inner().map_err(|e| Error::Io(e.into_error()))?
        }
        Format::Json => json_bytes(&r)?,
    };
    emit(a.common.output.as_deref(), out, &bytes)?;
    Ok(r.dominated)
}

fn cmd_fit(a: FitArgs, out: &mut dyn Write) -> Result<bool> {
    let template = load_model(&a.common.model)?;
    let ModelSpec::CovariateLogistic(m) = &template else {
        return Err(Error::InvalidArgument(format!(
            "fit needs a covariate_logistic template, got {}",
            template.family()
        )));
    };
    let data = SeriesPath::read_csv(fs::File::open(&a.data)?, m.n_categories)?;
    let design = LogitDesign::for_model(&template, &data)?;
    let init = (!a.zero_init).then_some(m.theta.as_slice());
    let fit = fit_newton(&design, init, a.tol, a.max_iter)?;
    let fitted = ModelSpec::covariate_logistic(m.n_categories, m.q, m.covariate_dim, fit.theta_hat.clone())?;
    let report = json!({
        "theta": fit.theta_hat,
        "loglik": fit.loglik,
        "se": fit.std_errors,
        "converged": fit.converged,
        "iterations": fit.iterations,
        "gradient_norm": fit.gradient_norm,
        "hessian_negative_definite": fit.hessian_negative_definite,
        "n_obs": design.n_obs(),
        "warnings": fit.warnings,
        "model": serde_json::to_value(&fitted)?,
    });
    emit(a.common.output.as_deref(), out, &json_bytes(&report)?)?;
    Ok(fit.converged)
}

fn cmd_stationary(a: StationaryArgs, out: &mut dyn Write) -> Result<bool> {
    let model = load_model(&a.common.model)?;
    let space = StateSpace::new(model.n_categories(), model.y_order().max(1))?;
    let result = if model.covariate_dim() > 0 {
        let z = match a.cov.read()? {
            Some(z) => z,
            None => a.cov.generator()?.generate(a.length, model.covariate_dim(), a.seed),
        };
        let family = LogisticFamily::new(model.clone())?;
        backward_row_limit(&family, &z, a.tol, a.max_depth)
    } else {
        let family = ConstantFamily::new(transition_matrix(&model, None)?)?;
        let z = vec![Vec::new(); a.max_depth];
        backward_row_limit(&family as &dyn TransitionFamily, &z, a.tol, a.max_depth)
    };
    let report = match result {
        Ok(lim) => json!({
            "family": model.family(),
            "pass": true,
            "depth": lim.depth,
            "certificate": lim.certificate,
            "states": (0..space.size())
                .map(|s| space.decode(s).iter().map(|c| c.index()).collect::<Vec<_>>())
                .collect::<Vec<_>>(),
            "row": lim.row,
        }),
        Err(Error::CertificateNotReached { achieved, depth }) => json!({
            "family": model.family(),
            "pass": false,
            "depth": depth,
            "certificate": achieved,
        }),
        Err(e) => return Err(e),
    };
    let pass = report["pass"].as_bool().unwrap_or(false);
    emit(a.common.output.as_deref(), out, &json_bytes(&report)?)?;
    Ok(pass)
}
