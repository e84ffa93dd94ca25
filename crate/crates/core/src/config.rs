//! Experiment config files (TOML).
//!
//! ```toml
//! scenario = "sg-basic"     # or a [wavepacket] table, not both
//! mode = "unitary"          # unitary | collapse (default unitary)
//! trials = 10000            # default 10000
//! seed = 7                  # optional; falls back to ENSEMBLEQ_SEED, then 0
//! output = "result.json"    # optional; stdout when absent
//! format = "json"           # json | csv (default json)
//!
//! [wavepacket]
//! sigma0 = 1.0              # defaults: sigma0 = mass = hbar = 1, p0 = 0
//! mass = 1.0
//! hbar = 1.0
//! p0 = 0.0
//! times = [0.0, "1tau"]     # absolute times or multiples of tau0
//! spectrum = false          # csv: emit f(k) instead of psi(x)
//!
//! [wavepacket.grid]
//! x_min = -60.0             # defaults: [-60, 60) with 1024 points
//! x_max = 60.0
//! points = 1024
//! ```
//!
//! [`parse_config`] reports every problem it finds, not just the first.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;
use toml::{Table, Value};

use crate::measurement::Mode;
use crate::scenarios::ScenarioId;
use crate::wavepacket::{GridSpec, PacketParams};

pub const DEFAULT_TRIALS: u64 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
}

impl OutputFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            OutputFormat::Json => "json",
            OutputFormat::Csv => "csv",
        }
    }
}

impl FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(OutputFormat::Json),
            "csv" => Ok(OutputFormat::Csv),
            other => Err(format!("unknown format `{other}`; expected json or csv")),
        }
    }
}

/// A time given directly or as a multiple of the spreading time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeSpec {
    Absolute(f64),
    Tau(f64),
}

impl TimeSpec {
    pub fn resolve(self, params: &PacketParams) -> f64 {
        match self {
            TimeSpec::Absolute(t) => t,
            TimeSpec::Tau(r) => r * params.tau0(),
        }
    }
}

impl fmt::Display for TimeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeSpec::Absolute(t) => write!(f, "{t}"),
            TimeSpec::Tau(r) => write!(f, "{r}tau"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid time `{0}`; expected a number or a multiple of tau0 such as `2tau`")]
pub struct InvalidTime(pub String);

impl FromStr for TimeSpec {
    type Err = InvalidTime;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || InvalidTime(s.to_string());
        let t = s.trim();
        let (num, tau) = ["tau0", "tau", "τ₀", "τ0", "τ"]
            .iter()
            .find_map(|suffix| t.strip_suffix(suffix).map(|n| (n.trim(), true)))
            .unwrap_or((t, false));
        let v: f64 = if tau && num.is_empty() {
            1.0
        } else {
            num.parse().map_err(|_| bad())?
        };
        if !v.is_finite() {
            return Err(bad());
        }
        Ok(if tau {
            TimeSpec::Tau(v)
        } else {
            TimeSpec::Absolute(v)
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WavepacketConfig {
    pub params: PacketParams,
    pub times: Vec<TimeSpec>,
    pub grid: GridSpec,
    pub spectrum: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Experiment {
    Scenario {
        id: ScenarioId,
        mode: Mode,
        trials: u64,
    },
    Wavepacket(WavepacketConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub format: OutputFormat,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "`{}`: {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid config:\n{}", .0.iter().map(|e| format!("  {e}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<FieldError>),
}

impl ConfigError {
    pub fn field_errors(&self) -> &[FieldError] {
        match self {
            ConfigError::Invalid(v) => v,
            ConfigError::Syntax { .. } => &[],
        }
    }
}

/// 1-based line and column of byte offset `at`.
fn line_column(text: &str, at: usize) -> (usize, usize) {
    let mut at = at.min(text.len());
    while !text.is_char_boundary(at) {
        at -= 1;
    }
    let before = &text[..at];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

struct Collector {
    errors: Vec<FieldError>,
}

impl Collector {
    fn push(&mut self, field: &str, message: impl Into<String>) {
        self.errors.push(FieldError {
            field: field.to_string(),
            message: message.into(),
        });
    }

    fn unknown_keys(&mut self, table: &Table, prefix: &str, allowed: &[&str]) {
        for key in table.keys() {
            if !allowed.contains(&key.as_str()) {
                self.push(
                    &format!("{prefix}{key}"),
                    format!("unknown key; allowed keys: {}", allowed.join(", ")),
                );
            }
        }
    }

    fn string<'a>(&mut self, table: &'a Table, prefix: &str, key: &str) -> Option<&'a str> {
        match table.get(key)? {
            Value::String(s) => Some(s),
            other => {
                self.push(
                    &format!("{prefix}{key}"),
                    format!("expected a string, found {}", other.type_str()),
                );
                None
            }
        }
    }

    fn float(&mut self, table: &Table, prefix: &str, key: &str) -> Option<f64> {
        match table.get(key)? {
            Value::Float(f) => Some(*f),
            Value::Integer(i) => Some(*i as f64),
            other => {
                self.push(
                    &format!("{prefix}{key}"),
                    format!("expected a number, found {}", other.type_str()),
                );
                None
            }
        }
    }

    fn unsigned(&mut self, table: &Table, prefix: &str, key: &str) -> Option<u64> {
        match table.get(key)? {
            Value::Integer(i) if *i >= 0 => Some(*i as u64),
            Value::Integer(i) => {
                self.push(
                    &format!("{prefix}{key}"),
                    format!("must be non-negative, got {i}"),
                );
                None
            }
            other => {
                self.push(
                    &format!("{prefix}{key}"),
                    format!("expected an integer, found {}", other.type_str()),
                );
                None
            }
        }
    }

    fn positive(&mut self, field: &str, v: Option<f64>, default: f64) -> f64 {
        match v {
            Some(x) if x.is_finite() && x > 0.0 => x,
            Some(x) => {
                self.push(field, format!("must be a positive finite number, got {x}"));
                default
            }
            None => default,
        }
    }
}

fn sub_table<'a>(c: &mut Collector, table: &'a Table, key: &str, field: &str) -> Option<&'a Table> {
    match table.get(key)? {
        Value::Table(t) => Some(t),
        other => {
            c.push(
                field,
                format!("expected a table, found {}", other.type_str()),
            );
            None
        }
    }
}

fn parse_wavepacket(c: &mut Collector, t: &Table) -> Option<WavepacketConfig> {
    const P: &str = "wavepacket.";
    c.unknown_keys(
        t,
        P,
        &["sigma0", "mass", "hbar", "p0", "times", "spectrum", "grid"],
    );
    let d = PacketParams::default();
    let errors_before = c.errors.len();
    let sigma0 = c.float(t, P, "sigma0");
    let sigma0 = c.positive("wavepacket.sigma0", sigma0, d.sigma0);
    let mass = c.float(t, P, "mass");
    let mass = c.positive("wavepacket.mass", mass, d.mass);
    let hbar = c.float(t, P, "hbar");
    let hbar = c.positive("wavepacket.hbar", hbar, d.hbar);
    let p0 = match c.float(t, P, "p0") {
        Some(p) if !p.is_finite() => {
            c.push("wavepacket.p0", format!("must be finite, got {p}"));
            d.p0
        }
        Some(p) => p,
        None => d.p0,
    };
    let spectrum = match t.get("spectrum") {
        None => false,
        Some(Value::Boolean(b)) => *b,
        Some(other) => {
            c.push(
                "wavepacket.spectrum",
                format!("expected a boolean, found {}", other.type_str()),
            );
            false
        }
    };
    let mut times = Vec::new();
    match t.get("times") {
        None => times.push(TimeSpec::Absolute(0.0)),
        Some(Value::Array(items)) if items.is_empty() => {
            c.push("wavepacket.times", "must list at least one time")
        }
        Some(Value::Array(items)) => {
            for (i, item) in items.iter().enumerate() {
                let field = format!("wavepacket.times[{i}]");
                let spec = match item {
                    Value::Float(f) if f.is_finite() => Ok(TimeSpec::Absolute(*f)),
                    Value::Integer(n) => Ok(TimeSpec::Absolute(*n as f64)),
                    Value::String(s) => s.parse::<TimeSpec>().map_err(|e| e.to_string()),
                    other => Err(format!(
                        "expected a number or a string like `2tau`, found {other}"
                    )),
                };
                match spec {
                    Ok(s) => times.push(s),
                    Err(e) => c.push(&field, e),
                }
            }
        }
        Some(other) => c.push(
            "wavepacket.times",
            format!("expected an array, found {}", other.type_str()),
        ),
    }

    let default_grid = GridSpec::default();
    let (x_min, x_max, points) = match sub_table(c, t, "grid", "wavepacket.grid") {
        Some(g) => {
            const G: &str = "wavepacket.grid.";
            c.unknown_keys(g, G, &["x_min", "x_max", "points"]);
            (
                c.float(g, G, "x_min").unwrap_or(default_grid.x_min()),
                c.float(g, G, "x_max").unwrap_or(default_grid.x_max()),
                c.unsigned(g, G, "points")
                    .unwrap_or(default_grid.n_points() as u64),
            )
        }
        None => (
            default_grid.x_min(),
            default_grid.x_max(),
            default_grid.n_points() as u64,
        ),
    };
    let grid = match GridSpec::new(x_min, x_max, points as usize) {
        Ok(g) => Some(g),
        Err(e) => {
            c.push("wavepacket.grid", e.to_string());
            None
        }
    };
    if c.errors.len() != errors_before {
        return None;
    }
    let params = PacketParams {
        sigma0,
        mass,
        hbar,
        p0,
    };
    let grid = grid?;
    for (i, ts) in times.iter().enumerate() {
        if let Err(e) = grid.check_packet(&params, ts.resolve(&params)) {
            c.push(
                &format!("wavepacket.times[{i}]"),
                format!("at t = {ts}: {e}"),
            );
        }
    }
    Some(WavepacketConfig {
        params,
        times,
        grid,
        spectrum,
    })
}

/// Parses and validates a config document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let table: Table = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |s| line_column(text, s.start));
        ConfigError::Syntax {
            line,
            column,
            message: e.message().trim().to_string(),
        }
    })?;
    let mut c = Collector { errors: Vec::new() };
    c.unknown_keys(
        &table,
        "",
        &[
            "scenario",
            "mode",
            "trials",
            "seed",
            "output",
            "format",
            "wavepacket",
        ],
    );

    let scenario = c
        .string(&table, "", "scenario")
        .and_then(|s| match s.parse::<ScenarioId>() {
            Ok(id) => Some(id),
            Err(e) => {
                c.push("scenario", e.to_string());
                None
            }
        });
    let mode = c
        .string(&table, "", "mode")
        .and_then(|s| match s.parse::<Mode>() {
            Ok(m) => Some(m),
            Err(e) => {
                c.push("mode", e.to_string());
                None
            }
        });
    let trials = c.unsigned(&table, "", "trials");
    if trials == Some(0) {
        c.push("trials", "must be at least 1");
    }
    let seed = c.unsigned(&table, "", "seed");
    let output = c.string(&table, "", "output").map(PathBuf::from);
    let format = c
        .string(&table, "", "format")
        .and_then(|s| match s.parse::<OutputFormat>() {
            Ok(f) => Some(f),
            Err(e) => {
                c.push("format", e);
                None
            }
        })
        .unwrap_or_default();
    let wave =
        sub_table(&mut c, &table, "wavepacket", "wavepacket").map(|t| parse_wavepacket(&mut c, t));

    let has_scenario = table.contains_key("scenario");
    let experiment = match (has_scenario, wave) {
        (true, Some(_)) => {
            c.push(
                "scenario",
                "set either `scenario` or a [wavepacket] table, not both",
            );
            None
        }
        (false, None) if !table.contains_key("wavepacket") => {
            c.push(
                "scenario",
                format!(
                    "missing; set `scenario` (one of {}) or a [wavepacket] table",
                    ScenarioId::registered_ids()
                ),
            );
            None
        }
        (false, Some(w)) => {
            for key in ["mode", "trials"] {
                if table.contains_key(key) {
                    c.push(key, "only applies to scenario runs");
                }
            }
            if let Some(w) = &w {
                if format == OutputFormat::Csv && w.times.len() != 1 {
                    c.push(
                        "format",
                        "csv output needs exactly one entry in `wavepacket.times`",
                    );
                }
            }
            w.map(Experiment::Wavepacket)
        }
        (_, _) => scenario.map(|id| Experiment::Scenario {
            id,
            mode: mode.unwrap_or(Mode::Unitary),
            trials: trials.unwrap_or(DEFAULT_TRIALS),
        }),
    };

    if !c.errors.is_empty() {
        return Err(ConfigError::Invalid(c.errors));
    }
    Ok(ExperimentConfig {
        experiment: experiment.expect("no errors implies a complete experiment"),
        seed,
        output,
        format,
    })
}
