//! `provprof`: provider profiling from the command line.
//!
//! Exit codes: 0 success, 1 a check failed, 2 invalid input or configuration,
//! 3 estimation failure.

mod config;
mod output;

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use provprof::dataset::{filter_min_volume, load_csv, make_folds, scale_outcomes, OutcomeKind};
use provprof::eif;
use provprof::nuisance::estimate_nuisances;
use provprof::oracle;
use provprof::simulation::{run_study, Scenario, Study};
use provprof::targeting::{target_all, Estimator, GlmForm, Parameter};
use thiserror::Error;

use config::{load_run, load_sim, to_toml};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Estimation(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    CheckFailed(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::CheckFailed(_) => 1,
            CliError::Validation(_) | CliError::Io(_) => 2,
            CliError::Estimation(_) => 3,
        }
    }
}

impl From<provprof::Error> for CliError {
    fn from(e: provprof::Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Estimation(e.to_string())
        }
    }
}

#[derive(Parser)]
#[command(
    name = "provprof",
    version,
    about = "Targeted estimators for provider profiling"
)]
struct Cli {
    /// Worker threads; 0 uses every available core.
    #[arg(long, global = true, env = "PROVPROF_THREADS", default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate standardization parameters for every provider in a CSV file.
    Estimate(EstimateArgs),
    /// Run a Monte Carlo study with known truth.
    Simulate(SimulateArgs),
    /// Funnel-plot limits and classifications from an estimates file.
    Funnel(FunnelArgs),
    /// Check the exact remainder identities on random discrete laws.
    OracleCheck(OracleArgs),
}

fn choice<T: Clone + Send + Sync + 'static>(
    parse: fn(&str) -> Option<T>,
) -> impl Fn(&str) -> Result<T, String> + Clone + Send + Sync + 'static {
    move |s| parse(s.trim()).ok_or_else(|| format!("unrecognized value `{s}`"))
}

fn parse_scenario(s: &str) -> Option<Scenario> {
    Scenario::ALL.into_iter().find(|v| v.as_str() == s)
}

fn parse_study(s: &str) -> Option<Study> {
    [Study::Sim1, Study::Sim2]
        .into_iter()
        .find(|v| v.as_str() == s)
}

fn parse_estimator(s: &str) -> Option<Estimator> {
    [Estimator::Tmle, Estimator::Glm]
        .into_iter()
        .find(|v| v.as_str() == s)
}

fn parse_glm_form(s: &str) -> Option<GlmForm> {
    match s {
        "provider_slopes" => Some(GlmForm::ProviderSlopes),
        "main_effects" => Some(GlmForm::MainEffects),
        _ => None,
    }
}

fn parse_kind(s: &str) -> Option<OutcomeKind> {
    match s {
        "binary" => Some(OutcomeKind::Binary),
        "continuous" => Some(OutcomeKind::Continuous),
        _ => None,
    }
}

#[derive(Args)]
struct EstimateArgs {
    /// TOML configuration; command-line flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    /// Directory for estimates.csv and positivity.csv.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', value_parser = choice(Parameter::parse))]
    parameters: Option<Vec<Parameter>>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    truncation: Option<f64>,
    #[arg(long)]
    min_volume: Option<usize>,
    #[arg(long)]
    level: Option<f64>,
    #[arg(long)]
    outcome: Option<String>,
    #[arg(long)]
    provider: Option<String>,
    #[arg(long, value_delimiter = ',')]
    covariates: Option<Vec<String>>,
    #[arg(long, value_parser = choice(parse_kind))]
    outcome_kind: Option<OutcomeKind>,
    /// Report the direct parameter despite flagged positivity violations.
    #[arg(long)]
    force_direct: bool,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = choice(parse_study))]
    study: Option<Study>,
    #[arg(long = "N", alias = "n")]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',', value_parser = choice(parse_scenario))]
    scenarios: Option<Vec<Scenario>>,
    #[arg(long, value_delimiter = ',', value_parser = choice(parse_estimator))]
    estimators: Option<Vec<Estimator>>,
    #[arg(long, value_delimiter = ',', value_parser = choice(Parameter::parse))]
    parameters: Option<Vec<Parameter>>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long, value_parser = choice(parse_glm_form))]
    glm_form: Option<GlmForm>,
    #[arg(long)]
    truth_draws: Option<usize>,
    /// Summary CSV.
    #[arg(long, default_value = "simulation.csv")]
    out: PathBuf,
    /// Optional per-replicate, per-provider CSV.
    #[arg(long)]
    audit: Option<PathBuf>,
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct FunnelArgs {
    /// Estimates file with `smr` and `smr_se` columns.
    #[arg(long)]
    estimates: PathBuf,
    /// Confidence levels of the limits; defaults to 0.95, 0.99 and 0.999.
    #[arg(long, value_delimiter = ',')]
    levels: Vec<f64>,
    /// Limits on the log-ratio scale.
    #[arg(long)]
    log_scale: bool,
    #[arg(long, default_value = "funnel.csv")]
    out: PathBuf,
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, default_value_t = 200)]
    laws: usize,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
    #[arg(long, default_value_t = 1e-10)]
    tolerance: f64,
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn estimate(args: EstimateArgs) -> Result<(), CliError> {
    let mut cfg = load_run(args.config.as_deref())?;
    macro_rules! set {
        ($($field:ident),*) => { $(if let Some(v) = args.$field { cfg.$field = v; })* };
    }
    set!(parameters, folds, seed, min_volume, level);
    if let Some(v) = args.input {
        cfg.input = Some(v);
    }
    if let Some(v) = args.out_dir {
        cfg.out_dir = v;
    }
    if let Some(v) = args.truncation {
        cfg.nuisance.truncation = v;
    }
    if let Some(v) = args.outcome {
        cfg.columns.outcome = v;
    }
    if let Some(v) = args.provider {
        cfg.columns.provider = v;
    }
    if let Some(v) = args.covariates {
        cfg.columns.covariates = v;
    }
    if let Some(v) = args.outcome_kind {
        cfg.columns.outcome_kind = Some(v);
    }
    cfg.force_direct |= args.force_direct;
    if args.print_config {
        print!("{}", to_toml(&cfg)?);
        return Ok(());
    }
    cfg.validate()?;

    let input = cfg.input.as_ref().expect("validated");
    let raw = load_csv(input, &cfg.columns)?;
    let (d, dropped) = filter_min_volume(&raw, cfg.min_volume)?;
    for (label, n) in &dropped.dropped {
        info!(
            "provider {label} dropped: {n} observations below the minimum volume {}",
            cfg.min_volume
        );
    }
    if cfg.folds == 1 {
        warn!("folds = 1 is a debug mode without cross-fitting");
    }
    let folds = make_folds(&d, cfg.folds, cfg.seed)?;
    let (scaled, scale) = scale_outcomes(&d, cfg.delta)?;
    let mut ncfg = cfg.nuisance.clone();
    let direct = cfg.parameters.contains(&Parameter::Phi);
    ncfg.direct = direct;
    let nu = estimate_nuisances(&scaled, &folds, &ncfg)?;
    let flagged: Vec<_> = nu.positivity.flagged().collect();
    if direct && !flagged.is_empty() {
        if cfg.force_direct {
            for p in &flagged {
                warn!(
                    "provider {}: direct parameter reported despite a positivity violation (min propensity {:.3e})",
                    d.label(p.provider),
                    p.min
                );
            }
        } else {
            let p = flagged[0];
            let names: Vec<&str> = flagged.iter().map(|p| d.label(p.provider)).collect();
            return Err(CliError::Estimation(format!(
                "{}; flagged providers: {}. Drop phi from the parameters or pass --force-direct",
                provprof::Error::PositivityViolation {
                    provider: d.label(p.provider).to_string(),
                    min_propensity: p.min,
                },
                names.join(", ")
            )));
        }
    }
    let mut est = target_all(&scaled, scale, &nu, &cfg.parameters, cfg.level)?;
    est.folds = cfg.folds;
    est.seed = cfg.seed;
    if direct && cfg.force_direct {
        for p in &flagged {
            est.providers[p.provider]
                .notes
                .push("warning: positivity violation overridden".into());
        }
    }

    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| CliError::Io(format!("{}: {e}", cfg.out_dir.display())))?;
    output::write_estimates(create(&cfg.out_dir.join("estimates.csv"))?, &est)?;
    output::write_positivity(
        &cfg.out_dir.join("positivity.csv"),
        &nu.positivity,
        d.provider_labels(),
    )?;
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<(), CliError> {
    let mut cfg = load_sim(args.config.as_deref(), args.study)?;
    if let Some(s) = args.study {
        cfg.study = s;
    }
    macro_rules! set {
        ($($field:ident),*) => { $(if let Some(v) = args.$field { cfg.$field = v; })* };
    }
    set!(
        n,
        m,
        sigma,
        replicates,
        seed,
        scenarios,
        estimators,
        parameters,
        folds,
        glm_form,
        truth_draws
    );
    if args.print_config {
        print!("{}", to_toml(&cfg)?);
        return Ok(());
    }
    cfg.validate()?;
    let res = run_study(&cfg)?;
    for (r, msg) in &res.failures {
        warn!("replicate {r} excluded: {msg}");
    }
    if let Some(se) = res.truth_se_max {
        info!("largest Monte Carlo standard error of the reassigned-mean truth: {se:.3e}");
    }
    output::write_simulation(&args.out, &res)?;
    if let Some(path) = &args.audit {
        output::write_audit(path, &res.records)?;
    }
    Ok(())
}

fn funnel(args: FunnelArgs) -> Result<(), CliError> {
    let file = File::open(&args.estimates)
        .map_err(|e| CliError::Validation(format!("{}: {e}", args.estimates.display())))?;
    let (header, rows) = output::read_estimates(file)?;
    for col in ["smr", "smr_se"] {
        if !header.iter().any(|h| h == col) {
            return Err(CliError::Validation(format!(
                "estimates file has no `{col}` column"
            )));
        }
    }
    let points: Vec<(String, f64, f64)> = rows
        .iter()
        .filter_map(|r| {
            Some((
                r.provider.clone(),
                *r.values.get("smr")?,
                *r.values.get("smr_se")?,
            ))
        })
        .collect();
    let table = eif::funnel(&points, &args.levels, args.log_scale)?;
    for label in &table.omitted {
        warn!("provider {label} omitted from the funnel: zero or undefined variance");
    }
    output::write_funnel(create(&args.out)?, &table)?;
    if let Some(path) = &args.svg {
        std::fs::write(path, output::funnel_svg(&table))
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn oracle_check(args: OracleArgs) -> Result<(), CliError> {
    if args.laws < 1 {
        return Err(CliError::Validation("laws must be at least 1".into()));
    }
    if !(args.tolerance >= 0.0) {
        return Err(CliError::Validation(format!(
            "tolerance must be non-negative, got {}",
            args.tolerance
        )));
    }
    let suite = oracle::identity_suite(args.laws, args.seed)?;
    println!(
        "laws {} checks {} seed {}",
        suite.laws, suite.checks, args.seed
    );
    for (p, r) in &suite.max_residual {
        println!("max_residual {p} {r:.6e}");
    }
    let worst = suite.worst();
    if worst <= args.tolerance {
        println!(
            "ok: worst residual {worst:.6e} <= tolerance {:.1e}",
            args.tolerance
        );
        Ok(())
    } else {
        Err(CliError::CheckFailed(format!(
            "worst residual {worst:.6e} exceeds tolerance {:.1e}",
            args.tolerance
        )))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Estimate(a) => estimate(a),
        Command::Simulate(a) => simulate(a),
        Command::Funnel(a) => funnel(a),
        Command::OracleCheck(a) => oracle_check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
