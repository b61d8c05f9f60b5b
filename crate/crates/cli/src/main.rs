//! `mode-atlas`: command-line driver for the mode-counting experiments.

mod config;
mod output;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mode_atlas_core::attention::{count_clusters, integrate, ParticleState, DEFAULT_GAP_FRACTION};
use mode_atlas_core::experiments::{self, SweepConfig};
use mode_atlas_core::gkde::WINDOW;
use mode_atlas_core::kacrice::{belt_params, exact_moments, intervals_t, kr_density, OMEGA_RULE};
use mode_atlas_core::{draw_samples, find_modes, validity_diagnostic, Error};
use serde::{Deserialize, Serialize};

use crate::output::{sidecar, write_atomic, write_json};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or input data. Exit code 2.
    Invalid(String),
    /// Output cannot be written. Exit code 3.
    Unwritable(String),
    Other(anyhow::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 2,
            CliError::Unwritable(_) => 3,
            CliError::Other(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Invalid(m) => write!(f, "invalid input: {m}"),
            CliError::Unwritable(m) => write!(f, "cannot write output: {m}"),
            CliError::Other(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidInput(_) | Error::InsufficientData(_) => CliError::Invalid(e.to_string()),
            other => CliError::Other(other.into()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "mode-atlas", version, about = "Mode counting for Gaussian kernel density estimators")]
struct Cli {
    /// TOML file with settings; flags given on the command line win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker thread cap.
    #[arg(long, global = true, env = "MODE_ATLAS_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Find the modes of one sampled KDE.
    Count(CountArgs),
    /// Monte Carlo sweep over a geometric beta grid with a power-law fit.
    Sweep(SweepArgs),
    /// Kac-Rice mode density on a grid of t.
    Kacrice(KacriceArgs),
    /// Edgeworth validity diagnostic at one point.
    Edgeworth(EdgeworthArgs),
    /// Self-attention particle dynamics on the circle.
    Attention(AttentionArgs),
    /// Refit a sweep CSV.
    Fit(FitArgs),
}

impl Command {
    fn section(&self) -> &'static str {
        match self {
            Command::Count(_) => "count",
            Command::Sweep(_) => "sweep",
            Command::Kacrice(_) => "kacrice",
            Command::Edgeworth(_) => "edgeworth",
            Command::Attention(_) => "attention",
            Command::Fit(_) => "fit",
        }
    }
}

#[derive(Args, Serialize, Deserialize, Default)]
struct CountArgs {
    #[arg(long)]
    n: Option<u64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// JSON output file (stdout when absent).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default)]
struct SweepArgs {
    #[arg(long)]
    n: Option<u64>,
    #[arg(long)]
    beta_min: Option<f64>,
    #[arg(long)]
    beta_max: Option<f64>,
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default)]
struct KacriceArgs {
    #[arg(long)]
    n: Option<u64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    t_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    t_max: Option<f64>,
    #[arg(long)]
    points: Option<usize>,
    /// CSV output file (stdout when absent).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default)]
struct EdgeworthArgs {
    #[arg(long)]
    n: Option<u64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Defaults to the midpoint of the right belt.
    #[arg(long, allow_hyphen_values = true)]
    t: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default)]
struct AttentionArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    /// Defaults to 0.05/beta.
    #[arg(long)]
    dt: Option<f64>,
    /// Defaults to a horizon of 20.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    gap_fraction: Option<f64>,
    /// Final angles.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Cluster report (stdout when absent).
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default)]
struct FitArgs {
    /// Sweep CSV to read.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
}

fn required<T>(v: Option<T>, name: &str) -> CliResult<T> {
    v.ok_or_else(|| CliError::Invalid(format!("--{name} is required")))
}

fn emit_json<T: Serialize>(path: Option<&Path>, value: &T) -> CliResult<()> {
    match path {
        Some(p) => write_json(p, value),
        None => {
            let mut out = std::io::stdout().lock();
            serde_json::to_writer_pretty(&mut out, value).map_err(|e| CliError::Other(e.into()))?;
            writeln!(out).map_err(|e| CliError::Other(e.into()))
        }
    }
}

fn emit_csv<C: Serialize>(path: Option<&Path>, config: &C, fill: impl FnOnce(&mut dyn Write) -> anyhow::Result<()>) -> CliResult<()> {
    match path {
        Some(p) => {
            write_atomic(p, fill)?;
            write_json(&sidecar(p), config)
        }
        None => {
            let mut out = std::io::stdout().lock();
            fill(&mut out).map_err(CliError::Other)
        }
    }
}

#[derive(Serialize)]
struct CountConfig {
    command: &'static str,
    n: u64,
    beta: f64,
    seed: u64,
    window: f64,
    omega_rule: &'static str,
}

#[derive(Serialize)]
struct WithConfig<C, T> {
    config: C,
    #[serde(flatten)]
    result: T,
}

fn cmd_count(a: CountArgs) -> CliResult<()> {
    let config = CountConfig {
        command: "count",
        n: required(a.n, "n")?,
        beta: required(a.beta, "beta")?,
        seed: required(a.seed, "seed")?,
        window: WINDOW,
        omega_rule: OMEGA_RULE,
    };
    let samples = draw_samples(config.n as usize, config.beta, config.seed)?;
    let report = find_modes(&samples)?;
    emit_json(a.output.as_deref(), &WithConfig { config, result: report })
}

fn cmd_sweep(a: SweepArgs) -> CliResult<()> {
    let n = a.n.unwrap_or(1000);
    let betas = experiments::geometric_grid(a.beta_min.unwrap_or(50.0), a.beta_max.unwrap_or(1000.0), a.points.unwrap_or(12))?;
    let trials = a.trials.unwrap_or(200);
    let seed = required(a.seed, "seed")?;
    let csv_path = a.csv.unwrap_or_else(|| "sweep.csv".into());
    let json_path = a.json.unwrap_or_else(|| "sweep.json".into());
    let config = SweepConfig::new(n, betas.clone(), trials, seed);
    let records = experiments::run_sweep(n, &betas, trials, seed)?;
    // The summary needs three beta values for a fit; smaller sweeps still get their CSV.
    let summary = experiments::summarize(n, &records, Some(config.clone()));
    write_atomic(&csv_path, |w| Ok(experiments::write_records_csv(&records, w)?))?;
    match summary {
        Ok(s) => write_json(&json_path, &s),
        Err(Error::InsufficientData(msg)) => write_json(
            &json_path,
            &serde_json::json!({ "n": n, "omega_rule": OMEGA_RULE, "fit": null, "note": msg, "config": config }),
        ),
        Err(e) => Err(e.into()),
    }
}

#[derive(Serialize)]
struct KacriceConfig {
    command: &'static str,
    n: u64,
    beta: f64,
    t_min: f64,
    t_max: f64,
    points: usize,
    omega_rule: &'static str,
}

fn cmd_kacrice(a: KacriceArgs) -> CliResult<()> {
    let n = required(a.n, "n")?;
    let beta = required(a.beta, "beta")?;
    if n == 0 || !(beta > 0.0 && beta.is_finite()) {
        return Err(CliError::Invalid("n must be positive and beta positive and finite".into()));
    }
    let reach = intervals_t(n, beta).t.map(|t| t.hi + 1.0);
    let t_min = match a.t_min.or(reach.map(|r| -r)) {
        Some(v) => v,
        None => return Err(CliError::Invalid("T is empty here; give --t-min and --t-max".into())),
    };
    let t_max = match a.t_max.or(reach) {
        Some(v) => v,
        None => return Err(CliError::Invalid("T is empty here; give --t-min and --t-max".into())),
    };
    if !(t_min < t_max) {
        return Err(CliError::Invalid(format!("t-min ({t_min}) must be below t-max ({t_max})")));
    }
    let points = a.points.unwrap_or(201);
    if points < 2 {
        return Err(CliError::Invalid("need at least 2 points".into()));
    }
    let rows: Vec<[f64; 4]> = (0..points)
        .map(|i| {
            let t = if i == points - 1 { t_max } else { t_min + (t_max - t_min) * i as f64 / (points - 1) as f64 };
            // Snap the symmetric grid's middle point onto the origin.
            let t = if t.abs() < 1e-12 * (t_max - t_min) { 0.0 } else { t };
            let d = kr_density(&exact_moments(t, beta, n))?;
            let at = belt_params(t, beta, n).a;
            Ok([t, d, at, beta.sqrt() * (-at).exp()])
        })
        .collect::<Result<_, Error>>()?;
    let config = KacriceConfig { command: "kacrice", n, beta, t_min, t_max, points, omega_rule: OMEGA_RULE };
    emit_csv(a.output.as_deref(), &config, |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["t", "kr_density", "a_t", "sqrt_beta_exp_neg_a_t"])?;
        for r in &rows {
            c.write_record(r.iter().map(|v| v.to_string()))?;
        }
        c.flush()?;
        Ok(())
    })
}

#[derive(Serialize)]
struct EdgeworthConfig {
    command: &'static str,
    n: u64,
    beta: f64,
    t: f64,
    trials: usize,
    seed: u64,
    window: f64,
    omega_rule: &'static str,
}

fn cmd_edgeworth(a: EdgeworthArgs) -> CliResult<()> {
    let n = required(a.n, "n")?;
    let beta = required(a.beta, "beta")?;
    let seed = required(a.seed, "seed")?;
    if n == 0 || !(beta > 0.0 && beta.is_finite()) {
        return Err(CliError::Invalid("n must be positive and beta positive and finite".into()));
    }
    let t = match a.t {
        Some(t) => t,
        None => intervals_t(n, beta)
            .right_belt()
            .map(|b| b.midpoint())
            .ok_or_else(|| CliError::Invalid("no belt at these parameters; give --t".into()))?,
    };
    let trials = a.trials.unwrap_or(10_000);
    let record = validity_diagnostic(n, beta, t, trials, seed)?;
    let config = EdgeworthConfig { command: "edgeworth", n, beta, t, trials, seed, window: WINDOW, omega_rule: OMEGA_RULE };
    emit_json(a.output.as_deref(), &WithConfig { config, result: record })
}

#[derive(Serialize)]
struct AttentionConfig {
    command: &'static str,
    n: usize,
    beta: f64,
    dt: f64,
    steps: usize,
    seed: u64,
    gap_fraction: f64,
}

fn cmd_attention(a: AttentionArgs) -> CliResult<()> {
    let n = required(a.n, "n")?;
    let beta = required(a.beta, "beta")?;
    let seed = required(a.seed, "seed")?;
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(CliError::Invalid("beta must be positive and finite".into()));
    }
    let dt = a.dt.unwrap_or(0.05 / beta);
    let steps = a.steps.unwrap_or((20.0 / dt).round() as usize);
    let gap_fraction = a.gap_fraction.unwrap_or(DEFAULT_GAP_FRACTION);
    if !(gap_fraction > 0.0) {
        return Err(CliError::Invalid("gap-fraction must be positive".into()));
    }
    let init = ParticleState::uniform(n, beta, seed)?;
    let end = integrate(&init, dt, steps)?;
    let report = count_clusters(&end, gap_fraction);
    let config = AttentionConfig { command: "attention", n, beta, dt, steps, seed, gap_fraction };
    if let Some(p) = a.csv.as_deref() {
        emit_csv(Some(p), &config, |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["index", "angle"])?;
            for (i, v) in end.angles().iter().enumerate() {
                c.write_record([i.to_string(), v.to_string()])?;
            }
            c.flush()?;
            Ok(())
        })?;
    }
    emit_json(a.json.as_deref(), &WithConfig { config, result: report })
}

fn cmd_fit(a: FitArgs) -> CliResult<()> {
    let input = required(a.input, "input")?;
    let file = std::fs::File::open(&input).map_err(|e| CliError::Invalid(format!("{}: {e}", input.display())))?;
    let records = experiments::read_records_csv(file).map_err(|e| CliError::Invalid(format!("{}: {e}", input.display())))?;
    let n = match records.first() {
        Some(r) if records.iter().all(|x| x.n == r.n) => r.n,
        Some(_) => return Err(CliError::Invalid("records mix several n".into())),
        None => return Err(CliError::Invalid("no records".into())),
    };
    let summary = experiments::summarize(n, &records, None)?;
    #[derive(Serialize)]
    struct FitOut {
        source: String,
        #[serde(flatten)]
        summary: experiments::SweepSummary,
    }
    emit_json(a.output.as_deref(), &FitOut { source: input.display().to_string(), summary })
}

fn resolve<T: Serialize + serde::de::DeserializeOwned>(flags: T, config: Option<&Path>, section: &str) -> CliResult<T> {
    match config {
        Some(p) => config::merge(&flags, config::load_section(p, section)?),
        None => Ok(flags),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = cli.config.as_deref();
    let section = cli.command.section();
    match cli.command {
        Command::Count(a) => cmd_count(resolve(a, cfg, section)?),
        Command::Sweep(a) => cmd_sweep(resolve(a, cfg, section)?),
        Command::Kacrice(a) => cmd_kacrice(resolve(a, cfg, section)?),
        Command::Edgeworth(a) => cmd_edgeworth(resolve(a, cfg, section)?),
        Command::Attention(a) => cmd_attention(resolve(a, cfg, section)?),
        Command::Fit(a) => cmd_fit(resolve(a, cfg, section)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.threads {
        Some(0) => Err(CliError::Invalid("--threads must be at least 1".into())),
        Some(k) => match rayon::ThreadPoolBuilder::new().num_threads(k).build() {
            Ok(pool) => pool.install(|| run(cli)),
            Err(e) => Err(CliError::Other(e.into())),
        },
        None => run(cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mode-atlas: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
