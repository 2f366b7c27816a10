//! Command-line front end behind the `mimo-cr` binary.
//!
//! Every subcommand's flags are optional at parse time; values missing on
//! the command line are filled from `--config` (top-level keys first, then a
//! table named after the subcommand), then from built-in defaults.
//! Outputs never contain timings or the worker count, so they are
//! byte-identical for a given seed; wall time goes to stderr.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::channel::{ChannelState, FadingEnsemble, NoiseSpec};
use crate::compound::{beta_hat, chernoff_info_density_bound, output_power_threshold, power_overflow_bound, run_feinstein_experiment, FeinsteinSetup};
use crate::cr::{cr_capacity, cr_capacity_bruteforce, cr_curve, eta_outage_cr_capacity, CrOptions, JointSource};
use crate::error::Error;
use crate::identification::{estimate_id_errors, IdConfig};
use crate::outage::{capacity_curve_eta, siso_outage_capacity, GainQuantileSource, OutageSpec, SearchOptions, StatePool};
use crate::protocol::{bsc, run_protocol_over_codebooks, ProtocolConfig, TransportConfig};
use crate::rng::SeedTree;
use crate::verify::{bound_checks, criterion8_cases, run_suite, Mutation, VerifyOptions, BOUND_TRIALS};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_CRITERION: i32 = 4;
pub const EXIT_PARAMETER: i32 = 5;

const DEFAULT_SEED: u64 = 1;

#[derive(Debug)]
pub enum AppError {
    Usage(String),
    Input(String),
    Criterion(String),
    Parameter(String),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Usage(_) => EXIT_USAGE,
            AppError::Input(_) => EXIT_INPUT,
            AppError::Criterion(_) => EXIT_CRITERION,
            AppError::Parameter(_) => EXIT_PARAMETER,
        }
    }

    fn message(&self) -> &str {
        match self {
            AppError::Usage(m) | AppError::Input(m) | AppError::Criterion(m) | AppError::Parameter(m) => m,
        }
    }
}

impl From<Error> for AppError {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_) | Error::Csv(_) | Error::Parse(_) => AppError::Input(e.to_string()),
            _ => AppError::Parameter(e.to_string()),
        }
    }
}

fn with_path(e: Error, path: &Path) -> AppError {
    match AppError::from(e) {
        AppError::Input(m) => AppError::Input(format!("{}: {m}", path.display())),
        other => other,
    }
}

type AppResult<T> = std::result::Result<T, AppError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "mimo-cr", version, about = "Outage and common-randomness capacities of MIMO slow-fading channels")]
pub struct Cli {
    /// Root seed; every generator is derived from it by labeled splitting.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// TOML or JSON file with default parameter values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Eta-outage capacity of a MIMO ensemble (one row per eta).
    OutageCapacity(OutageArgs),
    /// Scalar eta-outage capacity from the gain quantile.
    SisoCapacity(SisoArgs),
    /// CR capacity of a finite source at one communication rate.
    CrCapacity(CrArgs),
    /// CR capacity over a grid of communication rates.
    CrCurve(CrCurveArgs),
    /// Monte Carlo run of the binning protocol.
    SimulateProtocol(ProtocolArgs),
    /// Coding lemmas against simulation, optionally with the compound code.
    CompoundVerify(CompoundArgs),
    /// Toy identification run on top of the CR protocol.
    IdDemo(IdArgs),
    /// Tabulates a bound formula.
    Bounds(BoundsArgs),
    /// Runs the acceptance suite.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, Default)]
pub struct EnsembleArgs {
    /// `rayleigh` or `point-mass` (the latter with --diag).
    #[arg(long)]
    pub ensemble: Option<String>,
    /// Empirical ensemble CSV; overrides --ensemble.
    #[arg(long)]
    pub ensemble_csv: Option<PathBuf>,
    #[arg(long)]
    pub n_rx: Option<usize>,
    #[arg(long)]
    pub n_tx: Option<usize>,
    /// Per-entry variance of the Rayleigh ensemble.
    #[arg(long)]
    pub scale: Option<f64>,
    /// Real diagonal of the point-mass state.
    #[arg(long, value_delimiter = ',')]
    pub diag: Option<Vec<f64>>,
}

impl EnsembleArgs {
    fn build(&self, default_dims: (usize, usize)) -> AppResult<FadingEnsemble> {
        if let Some(p) = &self.ensemble_csv {
            return FadingEnsemble::load_empirical_csv(p).map_err(|e| with_path(e, p));
        }
        let (r, t) = (self.n_rx.unwrap_or(default_dims.0), self.n_tx.unwrap_or(default_dims.1));
        match self.ensemble.as_deref().unwrap_or("rayleigh") {
            "rayleigh" => Ok(FadingEnsemble::rayleigh(r, t, self.scale.unwrap_or(1.0))?),
            "point-mass" => {
                let d = self.diag.as_ref().ok_or_else(|| AppError::Usage("point-mass needs --diag".into()))?;
                Ok(FadingEnsemble::point_mass(ChannelState::diag(d)))
            }
            other => Err(AppError::Usage(format!("unknown ensemble '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, Default)]
pub struct OutageArgs {
    /// One or more outage levels, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub eta: Option<Vec<f64>>,
    #[arg(long)]
    pub power: Option<f64>,
    #[arg(long)]
    pub sigma_sq: Option<f64>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub channel: EnsembleArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, Default)]
pub struct SisoArgs {
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub power: Option<f64>,
    #[arg(long)]
    pub sigma_sq: Option<f64>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub channel: EnsembleArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, Default)]
pub struct SourceArgs {
    /// Joint pmf CSV (header row of Y labels, one row per X value).
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Doubly symmetric binary source with this crossover.
    #[arg(long)]
    pub dsbs: Option<f64>,
    /// Size of the auxiliary alphabet.
    #[arg(long)]
    pub u_card: Option<usize>,
}

impl SourceArgs {
    fn build(&self) -> AppResult<JointSource> {
        match (&self.source, self.dsbs) {
            (Some(p), _) => JointSource::load_csv(p).map_err(|e| with_path(e, p)),
            (None, Some(q)) => Ok(JointSource::dsbs(q)?),
            (None, None) => Err(AppError::Usage("give --source or --dsbs".into())),
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, Default)]
pub struct CrArgs {
    /// Communication rate budget in bits per source symbol.
    #[arg(long)]
    pub c: Option<f64>,
    /// Take the budget from the eta-outage capacity of the ensemble instead.
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub power: Option<f64>,
    #[arg(long)]
    pub sigma_sq: Option<f64>,
    #[arg(long)]
    pub samples: Option<usize>,
    /// Also report the exhaustive grid search at this resolution.
    #[arg(long)]
    pub bruteforce: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub src: SourceArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub channel: EnsembleArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, Default)]
pub struct CrCurveArgs {
    /// Explicit budgets; otherwise an even grid over [0, H(X|Y)].
    #[arg(long, value_delimiter = ',')]
    pub c: Option<Vec<f64>>,
    #[arg(long)]
    pub points: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub src: SourceArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, Default)]
pub struct ProtocolArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub typ_delta: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub states: Option<usize>,
    /// Independent codebook realizations.
    #[arg(long)]
    pub codebooks: Option<usize>,
    /// genie, noiseless, always-wrong or physical.
    #[arg(long)]
    pub transport: Option<String>,
    #[arg(long)]
    pub power: Option<f64>,
    #[arg(long)]
    pub sigma_sq: Option<f64>,
    /// Channel uses of the physical transport code.
    #[arg(long)]
    pub transport_length: Option<usize>,
    #[arg(long)]
    pub theta: Option<f64>,
    /// Crossover of the binary auxiliary test channel.
    #[arg(long)]
    pub aux_bsc: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub src: SourceArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub channel: EnsembleArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, Default)]
pub struct CompoundArgs {
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub ratio_trials: Option<usize>,
    /// Also simulate the compound code against the Feinstein bound.
    #[arg(long)]
    pub feinstein: Option<bool>,
    #[arg(long)]
    pub code_trials: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, Default)]
pub struct IdArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub identities: Option<usize>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    /// Second-stage rate in bits per use.
    #[arg(long)]
    pub stage2_delta: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub typ_delta: Option<f64>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub states: Option<usize>,
    #[arg(long)]
    pub aux_bsc: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Lemma {
    PowerOverflow,
    InfoDensity,
    OutputPower,
    BetaHat,
    Feinstein,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, Default)]
pub struct BoundsArgs {
    #[arg(long, value_enum)]
    pub lemma: Option<Lemma>,
    /// One or more block lengths.
    #[arg(long, value_delimiter = ',')]
    pub n: Option<Vec<usize>>,
    #[arg(long)]
    pub m: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub n_rx: Option<usize>,
    #[arg(long)]
    pub a: Option<f64>,
    #[arg(long)]
    pub power: Option<f64>,
    #[arg(long)]
    pub sigma_sq: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub rate: Option<f64>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub family_size: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MutationArg {
    ChernoffExponent,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, Default)]
pub struct VerifyArgs {
    /// Subset of criteria, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub criteria: Option<Vec<u8>>,
    /// Injects a known defect; the suite must then fail.
    #[arg(long, value_enum)]
    pub mutation: Option<MutationArg>,
}

/// Tabular part of a result.
struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

struct Report {
    table: Option<Table>,
    summary: Value,
    /// In CSV mode, also emit the summary (next to the table).
    summary_alongside: bool,
    failure: Option<String>,
}

impl Report {
    fn table(table: Table, summary: Value) -> Self {
        Report { table: Some(table), summary, summary_alongside: false, failure: None }
    }
}

fn num(x: f64) -> String {
    format!("{x}")
}

/// Parses and runs; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let start = Instant::now();
    let code = match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    };
    eprintln!("wall time: {:.3} s", start.elapsed().as_secs_f64());
    code
}

fn load_config(path: &Path) -> AppResult<Map<String, Value>> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::Input(format!("{}: {e}", path.display())))?;
    let is_json = path.extension().is_some_and(|e| e == "json");
    let value: Value = if is_json {
        serde_json::from_str(&text).map_err(|e| AppError::Input(format!("{}: {e}", path.display())))?
    } else {
        let t: toml::Table = toml::from_str(&text).map_err(|e| AppError::Input(format!("{}: {e}", path.display())))?;
        serde_json::to_value(t).map_err(|e| AppError::Input(e.to_string()))?
    };
    match value {
        Value::Object(m) => Ok(normalize_keys(m)),
        _ => Err(AppError::Input(format!("{}: top level must be a table", path.display()))),
    }
}

fn normalize_keys(m: Map<String, Value>) -> Map<String, Value> {
    m.into_iter()
        .map(|(k, v)| {
            let v = match v {
                Value::Object(inner) => Value::Object(normalize_keys(inner)),
                other => other,
            };
            (k.replace('-', "_"), v)
        })
        .collect()
}

/// Keys that apply to `section`: top-level scalars, then the section table.
fn section_keys(config: &Map<String, Value>, section: &str) -> Map<String, Value> {
    let mut out: Map<String, Value> = config.iter().filter(|(_, v)| !v.is_object()).map(|(k, v)| (k.clone(), v.clone())).collect();
    if let Some(Value::Object(t)) = config.get(&section.replace('-', "_")) {
        out.extend(t.clone());
    }
    out
}

/// Fills unset fields of `cli` from `config`.
fn merge<T: Serialize + DeserializeOwned>(cli: &T, config: &Map<String, Value>) -> AppResult<T> {
    let mut v = serde_json::to_value(cli).map_err(|e| AppError::Usage(e.to_string()))?;
    if let Value::Object(fields) = &mut v {
        for (k, cv) in config {
            if let Some(slot) = fields.get_mut(k) {
                if slot.is_null() {
                    *slot = cv.clone();
                }
            }
        }
    }
    serde_json::from_value(v).map_err(|e| AppError::Input(format!("config: {e}")))
}

fn check_eta(eta: f64) -> AppResult<()> {
    if (0.0..1.0).contains(&eta) {
        Ok(())
    } else {
        Err(AppError::Parameter(format!("eta must lie in [0, 1), got {eta}")))
    }
}

fn check_positive(name: &str, x: f64) -> AppResult<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(AppError::Parameter(format!("{name} must be positive, got {x}")))
    }
}

fn dispatch(cli: Cli) -> AppResult<()> {
    let config = match &cli.config {
        Some(p) => load_config(p)?,
        None => Map::new(),
    };
    let seed = match cli.seed {
        Some(s) => s,
        None => match config.get("seed") {
            Some(v) => v.as_u64().ok_or_else(|| AppError::Input("config: seed must be a non-negative integer".into()))?,
            None => DEFAULT_SEED,
        },
    };
    let threads = cli.threads.or_else(|| config.get("threads").and_then(Value::as_u64).map(|t| t as usize));
    let format = match cli.format {
        Some(f) => Some(f),
        None => match config.get("format") {
            Some(v) => Some(serde_json::from_value(v.clone()).map_err(|e| AppError::Input(format!("config: format: {e}")))?),
            None => None,
        },
    };
    let out = cli.out.clone().or_else(|| config.get("out").and_then(Value::as_str).map(PathBuf::from));
    let (name, default_format) = match &cli.command {
        Command::OutageCapacity(_) => ("outage-capacity", Format::Csv),
        Command::SisoCapacity(_) => ("siso-capacity", Format::Csv),
        Command::CrCapacity(_) => ("cr-capacity", Format::Csv),
        Command::CrCurve(_) => ("cr-curve", Format::Csv),
        Command::SimulateProtocol(_) => ("simulate-protocol", Format::Csv),
        Command::CompoundVerify(_) => ("compound-verify", Format::Csv),
        Command::IdDemo(_) => ("id-demo", Format::Json),
        Command::Bounds(_) => ("bounds", Format::Csv),
        Command::Verify(_) => ("verify", Format::Json),
    };
    let keys = section_keys(&config, name);
    let root = SeedTree::new(seed).label(name);
    let work = || -> AppResult<(Value, Report)> {
        Ok(match &cli.command {
            Command::OutageCapacity(a) => {
                let a = merge(a, &keys)?;
                (params(&a), outage_cmd(&a, seed, root)?)
            }
            Command::SisoCapacity(a) => {
                let a = merge(a, &keys)?;
                (params(&a), siso_cmd(&a, seed, root)?)
            }
            Command::CrCapacity(a) => {
                let a = merge(a, &keys)?;
                (params(&a), cr_cmd(&a, seed, root)?)
            }
            Command::CrCurve(a) => {
                let a = merge(a, &keys)?;
                (params(&a), cr_curve_cmd(&a, root)?)
            }
            Command::SimulateProtocol(a) => {
                let mut keys = keys.clone();
                let transport_table = match keys.get("transport") {
                    Some(Value::Object(_)) => keys.remove("transport"),
                    _ => None,
                };
                let a = merge(a, &keys)?;
                let mut p = params(&a);
                if let (Some(t), Value::Object(m)) = (&transport_table, &mut p) {
                    m.insert("transport".into(), t.clone());
                }
                (p, protocol_cmd(&a, transport_table, root)?)
            }
            Command::CompoundVerify(a) => {
                let a = merge(a, &keys)?;
                (params(&a), compound_cmd(&a, root)?)
            }
            Command::IdDemo(a) => {
                let a = merge(a, &keys)?;
                (params(&a), id_cmd(&a, root)?)
            }
            Command::Bounds(a) => {
                let a = merge(a, &keys)?;
                (params(&a), bounds_cmd(&a)?)
            }
            Command::Verify(a) => {
                let a = merge(a, &keys)?;
                (params(&a), verify_cmd(&a, seed, threads)?)
            }
        })
    };
    let (parameters, report) = match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| AppError::Parameter(format!("threads: {e}")))?
            .install(work)?,
        None => work()?,
    };
    let metadata = json!({
        "tool": "mimo-cr",
        "version": env!("CARGO_PKG_VERSION"),
        "subcommand": name,
        "seed": seed,
        "parameters": parameters,
    });
    emit(&report, &metadata, format.unwrap_or(default_format), out.as_deref())?;
    match report.failure {
        Some(msg) => Err(AppError::Criterion(msg)),
        None => Ok(()),
    }
}

fn params<T: Serialize>(a: &T) -> Value {
    let v = serde_json::to_value(a).unwrap_or(Value::Null);
    match v {
        Value::Object(m) => Value::Object(m.into_iter().filter(|(_, v)| !v.is_null()).collect()),
        other => other,
    }
}

fn write_out(path: Option<&Path>, bytes: &[u8]) -> AppResult<()> {
    match path {
        Some(p) => std::fs::write(p, bytes).map_err(|e| AppError::Input(format!("{}: {e}", p.display()))),
        None => std::io::stdout().write_all(bytes).map_err(|e| AppError::Input(e.to_string())),
    }
}

fn emit(report: &Report, metadata: &Value, format: Format, out: Option<&Path>) -> AppResult<()> {
    match (format, &report.table) {
        (Format::Csv, Some(t)) => {
            let mut buf = Vec::new();
            writeln!(buf, "# mimo-cr {} {}", metadata["version"].as_str().unwrap_or(""), metadata["subcommand"].as_str().unwrap_or("")).ok();
            writeln!(buf, "# seed: {}", metadata["seed"]).ok();
            writeln!(buf, "# parameters: {}", metadata["parameters"]).ok();
            {
                let mut w = csv::Writer::from_writer(&mut buf);
                w.write_record(&t.header).map_err(|e| AppError::Input(e.to_string()))?;
                for r in &t.rows {
                    w.write_record(r).map_err(|e| AppError::Input(e.to_string()))?;
                }
                w.flush().map_err(|e| AppError::Input(e.to_string()))?;
            }
            if report.summary_alongside {
                let doc = json!({ "metadata": metadata, "summary": report.summary });
                match out {
                    Some(p) => {
                        let side = p.with_extension("summary.json");
                        let text = serde_json::to_string_pretty(&doc).expect("plain data") + "\n";
                        write_out(Some(&side), text.as_bytes())?;
                    }
                    None => {
                        writeln!(buf, "# summary: {}", report.summary).ok();
                    }
                }
            }
            write_out(out, &buf)
        }
        _ => {
            let doc = json!({ "metadata": metadata, "result": report.summary });
            let text = serde_json::to_string_pretty(&doc).expect("plain data") + "\n";
            write_out(out, text.as_bytes())
        }
    }
}

fn outage_cmd(a: &OutageArgs, seed: u64, root: SeedTree) -> AppResult<Report> {
    let etas = a.eta.clone().unwrap_or_else(|| vec![0.1]);
    let power = a.power.unwrap_or(10.0);
    let sigma_sq = a.sigma_sq.unwrap_or(1.0);
    etas.iter().try_for_each(|&e| check_eta(e))?;
    check_positive("power", power)?;
    check_positive("sigma_sq", sigma_sq)?;
    let ens = a.channel.build((2, 2))?;
    let samples = a.samples.unwrap_or(100_000);
    let pool = StatePool::from_ensemble(&ens, samples, root.label("pool"))?;
    let mut search = SearchOptions::default();
    if let Some(r) = a.restarts {
        search.restarts = r;
    }
    let base = OutageSpec::new(etas[0], power, sigma_sq)?.with_samples(pool.len());
    let ests = capacity_curve_eta(&pool, &etas, &base, &search, root.label("search"))?;
    let rows: Vec<Vec<String>> = etas
        .iter()
        .zip(&ests)
        .map(|(&eta, e)| {
            vec![
                num(eta),
                num(power),
                num(sigma_sq),
                num(e.value_bits),
                num(e.lower_bracket),
                num(e.upper_bracket),
                e.diagnostics.samples.to_string(),
                seed.to_string(),
            ]
        })
        .collect();
    let summary = json!(etas
        .iter()
        .zip(&ests)
        .map(|(&eta, e)| json!({ "eta": eta, "capacity_bits": e.value_bits, "bracket": [e.lower_bracket, e.upper_bracket], "diagnostics": e.diagnostics }))
        .collect::<Vec<_>>());
    let header = vec!["eta", "P", "sigma_sq", "capacity_bits", "bracket_lo", "bracket_hi", "samples", "seed"];
    Ok(Report::table(Table { header, rows }, summary))
}

fn siso_cmd(a: &SisoArgs, seed: u64, root: SeedTree) -> AppResult<Report> {
    let eta = a.eta.unwrap_or(0.1);
    let power = a.power.unwrap_or(10.0);
    let sigma_sq = a.sigma_sq.unwrap_or(1.0);
    check_eta(eta)?;
    check_positive("power", power)?;
    let noise = NoiseSpec::new(sigma_sq)?;
    let ens = a.channel.build((1, 1))?;
    let samples = a.samples.unwrap_or(100_000);
    let pool = StatePool::from_ensemble(&ens, samples, root.label("pool"))?;
    let cap = siso_outage_capacity(&GainQuantileSource::Pool(&pool), eta, power, &noise)?;
    let rayleigh = a.channel.ensemble_csv.is_none() && a.channel.ensemble.as_deref().unwrap_or("rayleigh") == "rayleigh";
    let closed = if rayleigh {
        let scale = a.channel.scale.unwrap_or(1.0);
        Some(siso_outage_capacity(&GainQuantileSource::Rayleigh { scale: scale.sqrt() }, eta, power, &noise)?)
    } else {
        None
    };
    let row = vec![num(eta), num(power), num(sigma_sq), num(cap), closed.map(num).unwrap_or_default(), pool.len().to_string(), seed.to_string()];
    let summary = json!({ "eta": eta, "capacity_bits": cap, "rayleigh_closed_form": closed, "samples": pool.len() });
    let header = vec!["eta", "P", "sigma_sq", "capacity_bits", "closed_form_bits", "samples", "seed"];
    Ok(Report::table(Table { header, rows: vec![row] }, summary))
}

fn cr_options(src: &SourceArgs, root: SeedTree) -> CrOptions {
    CrOptions { u_card: src.u_card, seed: root.label("optimizer").value(), ..Default::default() }
}

fn cr_cmd(a: &CrArgs, seed: u64, root: SeedTree) -> AppResult<Report> {
    let source = a.src.build()?;
    let opts = cr_options(&a.src, root);
    let (c, point, outage) = match (a.c, a.eta) {
        (Some(c), _) => {
            if !(c >= 0.0 && c.is_finite()) {
                return Err(AppError::Parameter(format!("c must be non-negative, got {c}")));
            }
            (c, cr_capacity(&source, c, &opts)?, None)
        }
        (None, Some(eta)) => {
            check_eta(eta)?;
            let power = a.power.unwrap_or(10.0);
            check_positive("power", power)?;
            let ens = a.channel.build((1, 1))?;
            let spec = OutageSpec::new(eta, power, a.sigma_sq.unwrap_or(1.0))?.with_samples(a.samples.unwrap_or(100_000));
            let r = eta_outage_cr_capacity(&source, &ens, &spec, &SearchOptions::default(), &opts, root.label("eta"))?;
            (r.point.comm_rate_c, r.point, Some(r.capacity.value_bits))
        }
        (None, None) => return Err(AppError::Usage("give --c or --eta".into())),
    };
    let brute = match a.bruteforce {
        Some(res) => Some(cr_capacity_bruteforce(&source, c, res, a.src.u_card)?.cr_rate),
        None => None,
    };
    let row = vec![
        num(c),
        num(point.cr_rate),
        num(point.constraint_value),
        brute.map(num).unwrap_or_default(),
        seed.to_string(),
    ];
    let summary = json!({ "outage_capacity_bits": outage, "point": point, "bruteforce": brute });
    Ok(Report::table(Table { header: vec!["c", "cr_rate_bits", "constraint_bits", "bruteforce_bits", "seed"], rows: vec![row] }, summary))
}

fn cr_curve_cmd(a: &CrCurveArgs, root: SeedTree) -> AppResult<Report> {
    let source = a.src.build()?;
    let grid = match &a.c {
        Some(g) => g.clone(),
        None => {
            let k = a.points.unwrap_or(11).max(2);
            (0..k).map(|i| i as f64 * source.h_x_given_y() / (k - 1) as f64).collect()
        }
    };
    let pts = cr_curve(&source, &grid, &cr_options(&a.src, root))?;
    let rows = pts.iter().map(|p| vec![num(p.comm_rate_c), num(p.cr_rate), num(p.constraint_value)]).collect();
    let summary = json!({ "h_x": source.h_x(), "h_x_given_y": source.h_x_given_y(), "points": pts });
    Ok(Report::table(Table { header: vec!["c", "cr_rate_bits", "constraint_bits"], rows }, summary))
}

fn protocol_cmd(a: &ProtocolArgs, transport_table: Option<Value>, root: SeedTree) -> AppResult<Report> {
    let source = match (&a.src.source, a.src.dsbs) {
        (None, None) => JointSource::dsbs(0.05)?,
        _ => a.src.build()?,
    };
    let aux = bsc(a.aux_bsc.unwrap_or(0.05))?;
    let power = a.power.unwrap_or(100.0);
    let sigma_sq = a.sigma_sq.unwrap_or(1.0);
    let transport = match (&a.transport, transport_table) {
        (None, Some(t)) => serde_json::from_value(t).map_err(|e| AppError::Input(format!("config: transport: {e}")))?,
        (kind, _) => match kind.as_deref().unwrap_or("genie") {
            "genie" => TransportConfig::Genie { power, sigma_sq },
            "noiseless" => TransportConfig::Noiseless,
            "always-wrong" => TransportConfig::AlwaysWrong,
            "physical" => TransportConfig::Physical {
                power,
                sigma_sq,
                block_length: a.transport_length.unwrap_or(64),
                theta: a.theta.unwrap_or(0.5),
                noiseless: false,
            },
            other => return Err(AppError::Usage(format!("unknown transport '{other}'"))),
        },
    };
    let mut cfg = ProtocolConfig::new(a.n.unwrap_or(12), a.mu.unwrap_or(0.2), a.typ_delta.unwrap_or(0.05), transport);
    cfg.alpha_target = a.alpha.unwrap_or(cfg.alpha_target);
    cfg.trials = a.trials.unwrap_or(cfg.trials);
    cfg.n_states = a.states.unwrap_or(cfg.n_states);
    cfg.validate()?;
    let ens = a.channel.build((1, 1))?;
    let runs = run_protocol_over_codebooks(&source, &aux, &cfg, &ens, a.codebooks.unwrap_or(1).max(1), root)?;
    let mut rows = Vec::new();
    for (c, run) in runs.iter().enumerate() {
        for s in &run.per_state {
            rows.push(vec![
                c.to_string(),
                s.state_index.to_string(),
                num(s.disagreement),
                num(s.ci_half_width),
                num(s.encoder_reserve),
                num(s.transport_ok),
                num(s.both_reserve),
            ]);
        }
    }
    let summaries: Vec<Value> = runs
        .iter()
        .map(|r| {
            json!({
                "outage_fraction": r.outage_fraction,
                "median_disagreement": r.median_disagreement,
                "entropy_rate": r.entropy_rate_estimate,
                "k_alphabet_size": r.k_alphabet_size,
                "n1": r.n1,
                "n2": r.n2,
                "iux": r.iux,
                "iuy": r.iuy,
                "log2_k_bound": r.log2_k_bound,
                "cardinality_ok": r.cardinality_ok,
            })
        })
        .collect();
    let summary = if summaries.len() == 1 { summaries[0].clone() } else { json!(summaries) };
    let header = vec!["codebook", "state", "disagreement", "ci_half_width", "encoder_reserve", "transport_ok", "both_reserve"];
    let mut rep = Report::table(Table { header, rows }, summary);
    rep.summary_alongside = true;
    Ok(rep)
}

fn compound_cmd(a: &CompoundArgs, root: SeedTree) -> AppResult<Report> {
    let trials = (a.trials.unwrap_or(BOUND_TRIALS.0), a.ratio_trials.unwrap_or(BOUND_TRIALS.1));
    let checks = bound_checks(root.label("bounds"), trials, None)?;
    let mut rows: Vec<Vec<String>> = checks
        .iter()
        .map(|c| vec![c.bound_name.clone(), c.parameters.clone(), num(c.analytic), num(c.empirical), c.trials.to_string(), if c.pass { "pass" } else { "fail" }.into()])
        .collect();
    let mut failed: Vec<String> = checks.iter().filter(|c| !c.pass).map(|c| c.bound_name.clone()).collect();
    let mut experiments = Vec::new();
    if a.feinstein.unwrap_or(false) {
        for (i, (fam, p, r, beta)) in criterion8_cases()?.into_iter().enumerate() {
            let exp = run_feinstein_experiment(&fam, p, r, beta, 200, a.code_trials.unwrap_or(1000), root.label("feinstein").index(i as u64))?;
            let worst = exp.per_state.iter().map(|s| s.error_rate).fold(0.0, f64::max);
            let ok = !exp.nontrivial || exp.dominated;
            if !ok {
                failed.push("feinstein-compound".into());
            }
            rows.push(vec![
                "feinstein-compound".into(),
                format!("n=200 P={p} R={r} theta={} beta={beta}", exp.setup.theta),
                num(exp.bound),
                num(worst),
                exp.per_state.iter().map(|s| s.trials).sum::<usize>().to_string(),
                if ok { "pass" } else { "fail" }.into(),
            ]);
            experiments.push(exp);
        }
    }
    let mut rep = Report::table(
        Table { header: vec!["bound_name", "parameters", "analytic_value", "empirical_value", "trials", "result"], rows },
        json!({ "checks": checks, "feinstein": experiments }),
    );
    if !failed.is_empty() {
        rep.failure = Some(format!("bound not dominated: {}", failed.join(", ")));
    }
    Ok(rep)
}

fn id_cmd(a: &IdArgs, root: SeedTree) -> AppResult<Report> {
    let mut p = ProtocolConfig::new(a.n.unwrap_or(16), a.mu.unwrap_or(0.171), a.typ_delta.unwrap_or(0.1), TransportConfig::Noiseless);
    p.trials = a.trials.unwrap_or(200);
    p.n_states = a.states.unwrap_or(4);
    let cfg = IdConfig {
        protocol: p,
        n_identities: a.identities.unwrap_or(16),
        stage2_delta: a.stage2_delta.unwrap_or(0.75),
        stage2_transport: TransportConfig::Noiseless,
        lambda1: a.lambda1.unwrap_or(0.2),
        lambda2: a.lambda2.unwrap_or(0.5),
    };
    let src = JointSource::identical(&[0.5, 0.5])?;
    let ens = FadingEnsemble::point_mass(ChannelState::scalar(1.0));
    let out = estimate_id_errors(&src, &bsc(a.aux_bsc.unwrap_or(0.14))?, &cfg, &ens, root)?;
    let rows = out.per_state.iter().map(|s| vec![s.state_index.to_string(), num(s.e1), num(s.e2)]).collect();
    Ok(Report::table(Table { header: vec!["state", "e1", "e2"], rows }, serde_json::to_value(&out).expect("plain data")))
}

fn bounds_cmd(a: &BoundsArgs) -> AppResult<Report> {
    let lemma = a.lemma.ok_or_else(|| AppError::Usage("give --lemma".into()))?;
    let ns = a.n.clone().unwrap_or_else(|| vec![10]);
    let n_rx = a.n_rx.unwrap_or(1);
    let sigma_sq = a.sigma_sq.unwrap_or(1.0);
    let power = a.power.unwrap_or(1.0);
    let delta = a.delta.unwrap_or(1.0);
    let mut rows = Vec::new();
    let header: Vec<&'static str>;
    match lemma {
        Lemma::PowerOverflow => {
            let m = a.m.unwrap_or(1.0);
            check_positive("m", m)?;
            check_positive("delta", delta)?;
            header = vec!["n", "m", "delta", "bound"];
            for &n in &ns {
                rows.push(vec![n.to_string(), num(m), num(delta), num(power_overflow_bound(n, m, delta))]);
            }
        }
        Lemma::InfoDensity => {
            check_positive("delta", delta)?;
            header = vec!["n", "n_rx", "delta", "bound"];
            for &n in &ns {
                rows.push(vec![n.to_string(), n_rx.to_string(), num(delta), num(chernoff_info_density_bound(n, n_rx, delta))]);
            }
        }
        Lemma::OutputPower => {
            let av = a.a.unwrap_or(1.0);
            check_positive("power", power)?;
            check_positive("sigma_sq", sigma_sq)?;
            let (rho, factor) = output_power_threshold(av, power, n_rx, sigma_sq);
            header = vec!["n", "a", "P", "n_rx", "sigma_sq", "rho", "bound"];
            for &n in &ns {
                rows.push(vec![n.to_string(), num(av), num(power), n_rx.to_string(), num(sigma_sq), num(rho), num(factor.powi(n as i32))]);
            }
        }
        Lemma::BetaHat => {
            let beta = a.beta.unwrap_or(power / 10.0);
            if !(beta > 0.0 && beta < power) {
                return Err(AppError::Parameter(format!("beta must lie in (0, P), got {beta}")));
            }
            header = vec!["P", "beta", "beta_hat"];
            rows.push(vec![num(power), num(beta), num(beta_hat(power, beta))]);
        }
        Lemma::Feinstein => {
            let rate = a.rate.ok_or_else(|| AppError::Usage("feinstein needs --rate".into()))?;
            let theta = a.theta.ok_or_else(|| AppError::Usage("feinstein needs --theta".into()))?;
            check_positive("theta", theta)?;
            let beta = a.beta.unwrap_or(power / 10.0);
            header = vec!["n", "tau", "codebook", "cross", "overflow", "tails", "bound"];
            for &n in &ns {
                let s = FeinsteinSetup { family_size: a.family_size.unwrap_or(1), n, n_rx, rate, theta, power, beta };
                let t = s.terms();
                rows.push(vec![n.to_string(), num(s.tau()), num(t.codebook), num(t.cross), num(t.overflow), num(t.tails), num(t.total())]);
            }
        }
    }
    let summary = json!({ "lemma": lemma, "header": header, "rows": rows });
    Ok(Report::table(Table { header, rows }, summary))
}

fn verify_cmd(a: &VerifyArgs, seed: u64, threads: Option<usize>) -> AppResult<Report> {
    let ids = a.criteria.clone().unwrap_or_else(|| (1..=10).collect());
    if let Some(bad) = ids.iter().find(|&&i| !(1..=10).contains(&i)) {
        return Err(AppError::Parameter(format!("no criterion {bad}")));
    }
    let mut opts = VerifyOptions { seed, mutation: a.mutation.map(|_| Mutation::ChernoffExponent), ..Default::default() };
    if let Some(t) = threads {
        opts.thread_counts = (1, t.max(2));
    }
    let report = run_suite(&ids, &opts);
    for c in &report.criteria {
        eprintln!("criterion {:>2} {:<24} {}  [{:.1}s] {}", c.id, c.name, if c.pass { "PASS" } else { "FAIL" }, c.runtime_s, c.summary);
    }
    let rows = report
        .criteria
        .iter()
        .map(|c| vec![c.id.to_string(), c.name.clone(), if c.pass { "pass" } else { "fail" }.into(), format!("{:.3}", c.runtime_s), c.summary.clone()])
        .collect();
    let failed: Vec<String> = report.criteria.iter().filter(|c| !c.pass).map(|c| format!("{} ({})", c.id, c.name)).collect();
    let mut rep = Report::table(
        Table { header: vec!["criterion", "name", "result", "runtime_s", "summary"], rows },
        serde_json::to_value(&report).expect("plain data"),
    );
    if !failed.is_empty() {
        rep.failure = Some(format!("failed criteria: {}", failed.join(", ")));
    }
    Ok(rep)
}
