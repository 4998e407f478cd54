//! `eot` command line: generate, simulate, verify, compare.
//!
//! Exit codes: 0 success, 1 failed verification or internal invariant breach,
//! 2 input error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::Error;
use crate::path::{
    self, DeterministicKind, DeterministicSpec, GbmSpec, PathSpec, PricePath, GENERATOR_ID,
};
use crate::sim::{self, SimulationConfig, SimulationReport, StepChecks, Tolerances};
use crate::state::AssetWeights;
use crate::trade::RebalancePolicy;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "eot",
    version,
    about = "Constant-weight portfolio simulator with an exact entropy ledger"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a price path CSV from a seeded GBM or an analytic path.
    Generate(GenerateArgs),
    /// Run a policy along a price path and write the JSON report.
    Simulate(SimulateArgs),
    /// Re-check a JSON report; exit 0 iff every check passes.
    Verify(VerifyArgs),
    /// Run several policies on one path and tabulate the results.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DeterministicArg {
    ReciprocalPair,
    ExpRamp,
    Sinusoid,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// Geometric Brownian motion.
    #[arg(
        long,
        conflicts_with = "deterministic",
        required_unless_present = "deterministic"
    )]
    gbm: bool,
    #[arg(long, value_enum)]
    deterministic: Option<DeterministicArg>,
    #[arg(long)]
    assets: Option<usize>,
    #[arg(long)]
    steps: usize,
    /// Per-asset drift per tick, comma separated.
    #[arg(long, value_parser = parse_list, allow_hyphen_values = true)]
    mu: Option<Decimals>,
    /// Per-asset volatility per square-root tick, comma separated.
    #[arg(long, value_parser = parse_list, allow_hyphen_values = true)]
    sigma: Option<Decimals>,
    /// Initial prices (default: all ones).
    #[arg(long, value_parser = parse_list, allow_hyphen_values = true)]
    initial: Option<Decimals>,
    /// Row-major correlation matrix, comma separated.
    #[arg(long, value_parser = parse_list, allow_hyphen_values = true)]
    correlation: Option<Decimals>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    dt: f64,
    /// exp-ramp rates.
    #[arg(long, value_parser = parse_list, allow_hyphen_values = true)]
    rates: Option<Decimals>,
    /// sinusoid log-amplitudes.
    #[arg(long, value_parser = parse_list, allow_hyphen_values = true)]
    amplitudes: Option<Decimals>,
    /// sinusoid period in ticks.
    #[arg(long, allow_hyphen_values = true)]
    period: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    labels: Option<Vec<String>>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Price path CSV.
    #[arg(long)]
    path: PathBuf,
    /// Comma-separated weights in CSV column order.
    #[arg(long, value_parser = parse_list, allow_hyphen_values = true)]
    weights: Decimals,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    capital: f64,
    /// Skip the final full rebalance.
    #[arg(long)]
    no_settle: bool,
    #[arg(long, allow_hyphen_values = true)]
    tol_identity: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    tol_entropy: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    tol_equilibrium: Option<f64>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// full | buyhold | fractional:<alpha> | threshold:<band>
    #[arg(long, default_value = "full", value_parser = parse_policy)]
    policy: RebalancePolicy,
    #[arg(long)]
    out: PathBuf,
    /// Keep per-step records in the report.
    #[arg(long)]
    record_steps: bool,
    /// Also write the per-step CSV `t,T,L,lnP,S,residual` (implies --record-steps).
    #[arg(long)]
    steps_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long)]
    report: PathBuf,
    /// Fail with exit 2 when the report has no step records.
    #[arg(long)]
    require_steps: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TableFormat {
    Text,
    Csv,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Repeat once per policy; rows follow flag order.
    #[arg(long = "policy", required = true, value_parser = parse_policy)]
    policies: Vec<RebalancePolicy>,
    #[arg(long, value_enum, default_value_t = TableFormat::Text)]
    format: TableFormat,
    /// Write the table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

type Decimals = Vec<f64>;

fn parse_list(s: &str) -> std::result::Result<Decimals, String> {
    s.split(',')
        .map(|v| {
            let v = v.trim();
            v.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| format!("not a finite decimal: {v:?}"))
        })
        .collect()
}

fn parse_policy(s: &str) -> std::result::Result<RebalancePolicy, String> {
    s.parse::<RebalancePolicy>().map_err(|e| match e {
        Error::InvalidPolicy(m) => m,
        other => other.to_string(),
    })
}

#[derive(Debug)]
enum Failure {
    Input(String),
    Failed(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvariantBreach { .. } | Error::NegativeEntropy { .. } => {
                Failure::Failed(e.to_string())
            }
            other => Failure::Input(other.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn input<E: std::fmt::Display>(context: &str) -> impl FnOnce(E) -> Failure + '_ {
    move |e| Failure::Input(format!("{context}: {e}"))
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn dispatch<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let rendered = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{rendered}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{rendered}");
                    EXIT_INPUT
                }
            };
        }
    };
    let result = match cli.command {
        Command::Generate(a) => generate(a, out),
        Command::Simulate(a) => simulate(a, out),
        Command::Verify(a) => verify(a, out),
        Command::Compare(a) => compare(a, out),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Input(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_INPUT
        }
        Err(Failure::Failed(m)) => {
            let _ = writeln!(err, "failed: {m}");
            EXIT_FAILED
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(input(&path.display().to_string()))
}

fn generate(a: GenerateArgs, out: &mut dyn Write) -> CliResult<i32> {
    let spec = if a.gbm {
        let sigma = a
            .sigma
            .ok_or_else(|| Failure::Input("--gbm needs --sigma".into()))?;
        let n = a.assets.unwrap_or(sigma.len());
        let mu = a.mu.unwrap_or_else(|| vec![0.0; n]);
        for (flag, len) in [("--sigma", sigma.len()), ("--mu", mu.len())] {
            if len != n {
                return Err(Failure::Input(format!(
                    "{flag} has {len} values for --assets {n}"
                )));
            }
        }
        let initial = a.initial.unwrap_or_else(|| vec![1.0; n]);
        if initial.len() != n {
            return Err(Failure::Input(format!(
                "--initial has {} values for --assets {n}",
                initial.len()
            )));
        }
        let correlation = match a.correlation {
            Some(flat) if flat.len() == n * n => {
                Some(flat.chunks(n).map(<[f64]>::to_vec).collect())
            }
            Some(flat) => {
                return Err(Failure::Input(format!(
                    "--correlation has {} values, expected {}",
                    flat.len(),
                    n * n
                )))
            }
            None => None,
        };
        let seed = a
            .seed
            .ok_or_else(|| Failure::Input("--gbm needs --seed".into()))?;
        PathSpec::Gbm(GbmSpec {
            mu,
            sigma,
            correlation,
            steps: a.steps,
            initial,
            seed,
            dt: a.dt,
            labels: a.labels.clone(),
        })
    } else {
        let kind = match a
            .deterministic
            .expect("clap enforces --gbm or --deterministic")
        {
            DeterministicArg::ReciprocalPair => DeterministicKind::ReciprocalPair,
            DeterministicArg::ExpRamp => DeterministicKind::ExpRamp {
                rates: a
                    .rates
                    .ok_or_else(|| Failure::Input("exp-ramp needs --rates".into()))?,
            },
            DeterministicArg::Sinusoid => DeterministicKind::Sinusoid {
                amplitudes: a
                    .amplitudes
                    .ok_or_else(|| Failure::Input("sinusoid needs --amplitudes".into()))?,
                period: a
                    .period
                    .ok_or_else(|| Failure::Input("sinusoid needs --period".into()))?,
            },
        };
        PathSpec::Deterministic(DeterministicSpec {
            kind,
            steps: a.steps,
        })
    };
    let mut generated = path::generate(&spec)?;
    if let Some(labels) = a.labels {
        if labels.len() != generated.n_assets() {
            return Err(Failure::Input(format!(
                "--labels has {} names for {} assets",
                labels.len(),
                generated.n_assets()
            )));
        }
        generated = PricePath::new(
            generated.times().to_vec(),
            generated.prices().to_vec(),
            labels,
        )?;
    }
    if let Some(n) = a.assets {
        if n != generated.n_assets() {
            return Err(Failure::Input(format!(
                "--assets {n} but the path has {} assets",
                generated.n_assets()
            )));
        }
    }
    let mut buf = Vec::new();
    path::write_csv(&generated, &mut buf)?;
    write_file(&a.out, &buf)?;
    let _ = writeln!(
        out,
        "wrote {} ticks x {} assets to {}",
        generated.len(),
        generated.n_assets(),
        a.out.display()
    );
    if matches!(spec, PathSpec::Gbm(_)) {
        let _ = writeln!(out, "generator: {GENERATOR_ID}");
    }
    Ok(EXIT_OK)
}

fn load_path(file: &Path) -> CliResult<PricePath> {
    let f = std::fs::File::open(file).map_err(input(&file.display().to_string()))?;
    path::load_csv(f).map_err(input(&file.display().to_string()))
}

fn build_config(
    run: &RunArgs,
    labels: &[String],
    policy: RebalancePolicy,
    record_steps: bool,
) -> CliResult<SimulationConfig> {
    if run.weights.len() != labels.len() {
        return Err(Failure::Input(format!(
            "--weights has {} values but {} has {} asset columns",
            run.weights.len(),
            run.path.display(),
            labels.len()
        )));
    }
    let weights =
        AssetWeights::new(labels.to_vec(), run.weights.clone()).map_err(input("--weights"))?;
    let defaults = Tolerances::default();
    let config = SimulationConfig {
        weights,
        capital: run.capital,
        policy,
        settle_at_end: !run.no_settle,
        record_steps,
        tolerances: Tolerances {
            identity_tol: run.tol_identity.unwrap_or(defaults.identity_tol),
            entropy_tol: run.tol_entropy.unwrap_or(defaults.entropy_tol),
            equilibrium_tol: run.tol_equilibrium.unwrap_or(defaults.equilibrium_tol),
        },
    };
    config.validate().map_err(|e| match e {
        Error::NonPositiveCapital(_) => Failure::Input(format!("--capital: {e}")),
        other => Failure::Input(other.to_string()),
    })?;
    Ok(config)
}

fn simulate(a: SimulateArgs, out: &mut dyn Write) -> CliResult<i32> {
    let price_path = load_path(&a.run.path)?;
    let record = a.record_steps || a.steps_out.is_some();
    let config = build_config(&a.run, price_path.labels(), a.policy, record)?;
    let mut report = sim::run(&price_path, &config)?;
    report.provenance.source = a.run.path.display().to_string();
    write_file(&a.out, report.to_json().as_bytes())?;
    if let Some(steps_out) = &a.steps_out {
        write_file(steps_out, report.steps_csv()?.as_bytes())?;
    }
    let s = &report.summary;
    let _ = writeln!(
        out,
        "ln_t_ratio={} ln_p_ratio={} delta_s={} identity_residual={} checks={}",
        s.ln_t_ratio,
        s.ln_p_ratio,
        s.delta_s,
        s.identity_residual,
        if report.verification.all_pass() {
            "pass"
        } else {
            "FAIL"
        }
    );
    Ok(EXIT_OK)
}

fn verify(a: VerifyArgs, out: &mut dyn Write) -> CliResult<i32> {
    let text =
        std::fs::read_to_string(&a.report).map_err(input(&a.report.display().to_string()))?;
    let report =
        SimulationReport::from_json(&text).map_err(input(&a.report.display().to_string()))?;
    let mode = if a.require_steps {
        StepChecks::Required
    } else {
        StepChecks::IfPresent
    };
    let verdict =
        sim::verify_report(&report, mode).map_err(input(&a.report.display().to_string()))?;
    for (name, c) in &verdict.checks {
        let _ = write!(
            out,
            "{:<22} {}  slack={:e}",
            name,
            if c.pass { "pass" } else { "FAIL" },
            c.slack
        );
        if let Some(d) = &c.detail {
            let _ = write!(out, "  ({d})");
        }
        let _ = writeln!(out);
    }
    Ok(if verdict.all_pass() {
        EXIT_OK
    } else {
        EXIT_FAILED
    })
}

fn compare(a: CompareArgs, out: &mut dyn Write) -> CliResult<i32> {
    let price_path = load_path(&a.run.path)?;
    let configs = a
        .policies
        .iter()
        .map(|p| build_config(&a.run, price_path.labels(), *p, false))
        .collect::<CliResult<Vec<_>>>()?;
    let table = sim::compare_policies(&price_path, &configs)?;
    let rendered = match a.format {
        TableFormat::Text => table.to_text(),
        TableFormat::Csv => table.to_csv(),
    };
    match &a.out {
        Some(file) => write_file(file, rendered.as_bytes())?,
        None => {
            let _ = write!(out, "{rendered}");
        }
    }
    Ok(EXIT_OK)
}
