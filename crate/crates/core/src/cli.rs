//! Command-line front end.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 invalid input.
//! Results go to `--out` when given and to stdout otherwise; nothing is
//! written to `--out` unless the whole computation succeeded.
//!
//! Master seed precedence: `--seed`, then the config file, then the
//! `ENSEMBLEQ_SEED` environment variable, then 0.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{parse_config, Experiment, OutputFormat, TimeSpec, WavepacketConfig};
use crate::ensemble::{
    compare_modes, exact_comparison, post_select, run_trials, ComparisonReport, EnsembleStats,
    Predicate,
};
use crate::measurement::Mode;
use crate::scenarios::ScenarioId;
use crate::wavepacket::{
    evolve_free, fourier_decompose, gaussian_packet, position_stats, spectrum_shape_deviation,
    velocity_stats, wave_fidelity, GridSpec, PacketParams,
};

pub const SEED_ENV: &str = "ENSEMBLEQ_SEED";

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INVALID: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "ensembleq",
    version,
    about = "Measurement as entanglement: scenario ensembles and free wavepackets"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the registered scenario ids, one per line.
    ListScenarios,
    /// Run seeded trials of a scenario, or a wavepacket config.
    Run(RunArgs),
    /// Gaussian packet statistics and curves.
    Wavepacket(WaveArgs),
    /// Sample both measurement modes and compare with exact predictions.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Result file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Omit the timestamp so identical inputs give identical bytes.
    #[arg(long)]
    pub no_timestamp: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML experiment config.
    #[arg(long, conflicts_with_all = ["scenario", "mode", "trials"])]
    pub config: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    pub scenario: Option<String>,
    /// unitary | collapse
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub trials: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// json | csv
    #[arg(long)]
    pub format: Option<String>,
    /// Also report the sub-ensemble with READOUT=VALUE (repeatable; all must hold).
    #[arg(long, value_name = "READOUT=VALUE")]
    pub select: Vec<String>,
    /// Run trials on one thread.
    #[arg(long)]
    pub serial: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct WaveArgs {
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub sigma0: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub mass: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub hbar: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub p0: f64,
    /// Time, absolute or as a multiple of tau0 (`2tau`); repeatable.
    #[arg(long = "time", default_value = "0", allow_negative_numbers = true)]
    pub times: Vec<TimeSpec>,
    #[arg(long, default_value_t = 1024)]
    pub grid_points: usize,
    /// Grid spans [-half-width, half-width).
    #[arg(long, default_value_t = 60.0)]
    pub half_width: f64,
    /// CSV: emit the spectrum f(k) instead of psi(x).
    #[arg(long)]
    pub spectrum: bool,
    /// csv | json
    #[arg(long, default_value = "csv")]
    pub format: String,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub scenario: String,
    #[arg(long, default_value_t = crate::config::DEFAULT_TRIALS)]
    pub trials: u64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub serial: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug)]
enum Failure {
    Invalid(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Invalid(_) => EXIT_INVALID,
            Failure::Runtime(_) => EXIT_RUNTIME,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Invalid(m) | Failure::Runtime(m) => m,
        }
    }
}

struct Rendered {
    text: String,
    out: Option<PathBuf>,
}

pub fn parse_args<I, T>(argv: I) -> Result<Cli, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    Cli::try_parse_from(argv)
}

/// Runs the CLI with the process environment and standard streams.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let env_seed = std::env::var(SEED_ENV).ok();
    run_with(
        argv,
        env_seed.as_deref(),
        &mut std::io::stdout(),
        &mut std::io::stderr(),
    )
}

/// Runs the CLI with an explicit seed fallback and output streams.
pub fn run_with<I, T>(
    argv: I,
    env_seed: Option<&str>,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match parse_args(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let sink: &mut dyn Write = if e.use_stderr() { stderr } else { stdout };
            let _ = write!(sink, "{}", e.render());
            return code;
        }
    };
    let rendered = match dispatch(cli.command, env_seed) {
        Ok(r) => r,
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message());
            return f.code();
        }
    };
    let written = match &rendered.out {
        Some(path) => std::fs::write(path, &rendered.text)
            .map_err(|e| format!("cannot write {}: {e}", path.display())),
        None => stdout
            .write_all(rendered.text.as_bytes())
            .map_err(|e| format!("cannot write to stdout: {e}")),
    };
    match written {
        Ok(()) => 0,
        Err(m) => {
            let _ = writeln!(stderr, "error: {m}");
            EXIT_RUNTIME
        }
    }
}

fn dispatch(command: Command, env_seed: Option<&str>) -> Result<Rendered, Failure> {
    match command {
        Command::ListScenarios => Ok(Rendered {
            text: ScenarioId::ALL.iter().map(|id| format!("{id}\n")).collect(),
            out: None,
        }),
        Command::Run(args) => run_command(args, env_seed),
        Command::Wavepacket(args) => wave_command(args),
        Command::Compare(args) => compare_command(args, env_seed),
    }
}

fn resolve_seed(flag: Option<u64>, config: Option<u64>, env: Option<&str>) -> Result<u64, Failure> {
    if let Some(s) = flag.or(config) {
        return Ok(s);
    }
    match env {
        None => Ok(0),
        Some(v) => v.trim().parse().map_err(|_| {
            Failure::Invalid(format!("{SEED_ENV}=`{v}` is not a non-negative integer"))
        }),
    }
}

fn timestamp(o: &OutputArgs) -> Option<u64> {
    if o.no_timestamp {
        None
    } else {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .ok()
            .map(|d| d.as_secs())
    }
}

fn parse_or_invalid<T: std::str::FromStr>(s: &str) -> Result<T, Failure>
where
    T::Err: std::fmt::Display,
{
    s.parse()
        .map_err(|e: T::Err| Failure::Invalid(e.to_string()))
}

fn to_json<T: Serialize>(doc: &T) -> Result<String, Failure> {
    serde_json::to_string_pretty(doc)
        .map(|s| s + "\n")
        .map_err(|e| Failure::Runtime(format!("cannot serialize result: {e}")))
}

fn read_config(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path)
        .map_err(|e| Failure::Runtime(format!("cannot read config {}: {e}", path.display())))
}

#[derive(Debug, Serialize)]
struct ExactRow {
    readout: String,
    values: Vec<String>,
    probabilities: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct RunDocument<'a> {
    schema: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    timestamp: Option<u64>,
    scenario: ScenarioId,
    mode: Mode,
    n: u64,
    seed: u64,
    stats: &'a EnsembleStats,
    exact: Vec<ExactRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    subensemble: Option<&'a EnsembleStats>,
}

#[derive(Debug, Serialize)]
struct CompareDocument<'a> {
    schema: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    timestamp: Option<u64>,
    #[serde(flatten)]
    report: &'a ComparisonReport,
}

fn stats_csv(sets: &[&EnsembleStats]) -> Result<String, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Failure::Runtime(format!("cannot write csv: {e}"));
    w.write_record([
        "ensemble",
        "readout",
        "value",
        "count",
        "frequency",
        "stderr",
    ])
    .map_err(csv_err)?;
    for s in sets {
        for r in &s.readouts {
            for i in 0..r.values.len() {
                w.write_record([
                    s.id.clone(),
                    r.readout.clone(),
                    r.values[i].clone(),
                    r.counts[i].to_string(),
                    r.frequencies[i].to_string(),
                    r.stderr[i].to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Failure::Runtime(e.to_string()))
}

fn parse_selection(items: &[String]) -> Result<Option<Predicate>, Failure> {
    if items.is_empty() {
        return Ok(None);
    }
    let mut pairs = Vec::new();
    for item in items {
        let (r, v) = item.split_once('=').ok_or_else(|| {
            Failure::Invalid(format!("--select `{item}` must look like READOUT=VALUE"))
        })?;
        pairs.push((r.trim().to_string(), v.trim().to_string()));
    }
    Ok(Some(Predicate(pairs)))
}

fn run_command(args: RunArgs, env_seed: Option<&str>) -> Result<Rendered, Failure> {
    let mut seed_from_config = None;
    let mut out = args.output.out.clone();
    let mut format = None;
    let (id, mode, trials) = if let Some(path) = &args.config {
        let cfg = parse_config(&read_config(path)?)
            .map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))?;
        seed_from_config = cfg.seed;
        out = out.or(cfg.output);
        format = Some(cfg.format);
        match cfg.experiment {
            Experiment::Scenario { id, mode, trials } => (id, mode, trials),
            Experiment::Wavepacket(w) => {
                if !args.select.is_empty() {
                    return Err(Failure::Invalid(
                        "--select applies to scenario runs only".into(),
                    ));
                }
                let format = match &args.format {
                    Some(f) => parse_or_invalid(f)?,
                    None => cfg.format,
                };
                let text = render_wavepacket(&w, format, timestamp(&args.output))?;
                return Ok(Rendered { text, out });
            }
        }
    } else {
        let id = parse_or_invalid::<ScenarioId>(args.scenario.as_deref().unwrap_or_default())?;
        let mode = args
            .mode
            .as_deref()
            .map(parse_or_invalid::<Mode>)
            .transpose()?
            .unwrap_or(Mode::Unitary);
        (
            id,
            mode,
            args.trials.unwrap_or(crate::config::DEFAULT_TRIALS),
        )
    };
    let format = match &args.format {
        Some(f) => parse_or_invalid(f)?,
        None => format.unwrap_or_default(),
    };
    if trials == 0 {
        return Err(Failure::Invalid("trial count must be at least 1".into()));
    }
    let seed = resolve_seed(args.seed, seed_from_config, env_seed)?;
    let predicate = parse_selection(&args.select)?;

    let (records, stats) = run_trials(id, mode, trials, seed, !args.serial)
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    let sub = match &predicate {
        Some(p) => {
            Some(post_select(&records, &stats, p).map_err(|e| Failure::Invalid(e.to_string()))?)
        }
        None => None,
    };
    let text = match format {
        OutputFormat::Json => {
            let (rows, _) = exact_comparison(id).map_err(|e| Failure::Runtime(e.to_string()))?;
            let exact = rows
                .into_iter()
                .map(|r| ExactRow {
                    readout: r.readout,
                    values: r.values,
                    probabilities: if mode == Mode::Unitary {
                        r.unitary
                    } else {
                        r.collapse
                    },
                })
                .collect();
            to_json(&RunDocument {
                schema: "ensembleq.run.v1",
                timestamp: timestamp(&args.output),
                scenario: id,
                mode,
                n: trials,
                seed,
                stats: &stats,
                exact,
                subensemble: sub.as_ref(),
            })?
        }
        OutputFormat::Csv => {
            let mut sets = vec![&stats];
            sets.extend(sub.as_ref());
            stats_csv(&sets)?
        }
    };
    Ok(Rendered { text, out })
}

fn compare_command(args: CompareArgs, env_seed: Option<&str>) -> Result<Rendered, Failure> {
    let id = parse_or_invalid::<ScenarioId>(&args.scenario)?;
    if args.trials == 0 {
        return Err(Failure::Invalid("trial count must be at least 1".into()));
    }
    let seed = resolve_seed(args.seed, None, env_seed)?;
    let report = compare_modes(id, args.trials, seed, !args.serial)
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    let text = to_json(&CompareDocument {
        schema: "ensembleq.compare.v1",
        timestamp: timestamp(&args.output),
        report: &report,
    })?;
    Ok(Rendered {
        text,
        out: args.output.out,
    })
}

fn wave_command(args: WaveArgs) -> Result<Rendered, Failure> {
    let format: OutputFormat = parse_or_invalid(&args.format)?;
    let params = PacketParams::new(args.sigma0, args.mass, args.hbar, args.p0)
        .map_err(|e| Failure::Invalid(e.to_string()))?;
    let grid = GridSpec::symmetric(args.half_width, args.grid_points)
        .map_err(|e| Failure::Invalid(e.to_string()))?;
    for t in &args.times {
        grid.check_packet(&params, t.resolve(&params))
            .map_err(|e| Failure::Invalid(format!("at t = {t}: {e}")))?;
    }
    let cfg = WavepacketConfig {
        params,
        times: args.times,
        grid,
        spectrum: args.spectrum,
    };
    let text = render_wavepacket(&cfg, format, timestamp(&args.output))?;
    Ok(Rendered {
        text,
        out: args.output.out,
    })
}

#[derive(Debug, Serialize)]
struct ParamsSummary {
    sigma0: f64,
    mass: f64,
    hbar: f64,
    p0: f64,
    tau0: f64,
}

#[derive(Debug, Serialize)]
struct GridSummary {
    x_min: f64,
    x_max: f64,
    points: usize,
    dx: f64,
    dk: f64,
}

#[derive(Debug, Serialize)]
struct VelocitySummary {
    mean: f64,
    std: f64,
    /// `hbar / (2 m sigma0)`, the second moment of `|f(k)|^2`.
    born_std: f64,
    /// `hbar / (m sigma0)`, a commonly quoted value that disagrees with `born_std`.
    quoted_std: f64,
    quoted_over_born: f64,
    discrepancy: bool,
}

#[derive(Debug, Serialize)]
struct TimeSummary {
    t: f64,
    t_over_tau0: f64,
    norm: f64,
    position_mean: f64,
    position_std: f64,
    expected_std: f64,
    propagator_fidelity: f64,
    parseval_error: f64,
}

#[derive(Debug, Serialize)]
struct WaveDocument {
    schema: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    timestamp: Option<u64>,
    params: ParamsSummary,
    grid: GridSummary,
    velocity: VelocitySummary,
    spectrum_shape_rms: f64,
    times: Vec<TimeSummary>,
}

fn render_wavepacket(
    cfg: &WavepacketConfig,
    format: OutputFormat,
    timestamp: Option<u64>,
) -> Result<String, Failure> {
    let p = &cfg.params;
    let invalid = |e: crate::wavepacket::WaveError| Failure::Invalid(e.to_string());
    match format {
        OutputFormat::Csv => {
            let [t] = cfg.times.as_slice() else {
                return Err(Failure::Invalid("csv output needs exactly one time".into()));
            };
            let w = gaussian_packet(p, t.resolve(p), &cfg.grid).map_err(invalid)?;
            Ok(if cfg.spectrum {
                fourier_decompose(&w).to_csv()
            } else {
                w.to_csv()
            })
        }
        OutputFormat::Json => {
            let start = gaussian_packet(p, 0.0, &cfg.grid).map_err(invalid)?;
            let s0 = fourier_decompose(&start);
            let v = velocity_stats(&s0, p.mass);
            let born = p.hbar / (2.0 * p.mass * p.sigma0);
            let quoted = p.hbar / (p.mass * p.sigma0);
            let mut times = Vec::new();
            for ts in &cfg.times {
                let t = ts.resolve(p);
                let w = gaussian_packet(p, t, &cfg.grid).map_err(invalid)?;
                let stats = position_stats(&w);
                let spec = fourier_decompose(&w);
                times.push(TimeSummary {
                    t,
                    t_over_tau0: t / p.tau0(),
                    norm: stats.norm,
                    position_mean: stats.mean,
                    position_std: stats.std,
                    expected_std: p.width_at(t),
                    propagator_fidelity: wave_fidelity(&evolve_free(&start, t), &w),
                    parseval_error: (spec.norm_sqr() - w.norm_sqr()).abs(),
                });
            }
            to_json(&WaveDocument {
                schema: "ensembleq.wavepacket.v1",
                timestamp,
                params: ParamsSummary {
                    sigma0: p.sigma0,
                    mass: p.mass,
                    hbar: p.hbar,
                    p0: p.p0,
                    tau0: p.tau0(),
                },
                grid: GridSummary {
                    x_min: cfg.grid.x_min(),
                    x_max: cfg.grid.x_max(),
                    points: cfg.grid.n_points(),
                    dx: cfg.grid.dx(),
                    dk: cfg.grid.dk(),
                },
                velocity: VelocitySummary {
                    mean: v.mean,
                    std: v.std,
                    born_std: born,
                    quoted_std: quoted,
                    quoted_over_born: quoted / born,
                    discrepancy: (quoted - v.std).abs() > 1e-6 * v.std,
                },
                spectrum_shape_rms: spectrum_shape_deviation(&s0, p),
                times,
            })
        }
    }
}
