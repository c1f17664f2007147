//! `basisrisk`: zonal and design basis risk of index insurance from yield panels.

mod commands;
mod output;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use basisrisk::evaluation::{DEFAULT_CRRA, DEFAULT_HORIZON, DEFAULT_TAU, DEFAULT_TRIGGER};
use basisrisk::zones::DEFAULT_MIN_FIELDS;
use basisrisk::{Denominator, MeasurementMode, Metric, TemporalAgg, ZoneLevel};
use clap::{Args, Parser, Subcommand, ValueEnum};

use output::Format;

/// Exit code 1 for runtime failures, 2 for bad input.
#[derive(Debug)]
pub enum CliError {
    Input(String),
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<basisrisk::Error> for CliError {
    fn from(e: basisrisk::Error) -> Self {
        if e.is_input_error() {
            CliError::Input(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

#[derive(Parser)]
#[command(name = "basisrisk", version, about, long_about = None)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Zonal risk per administrative level (one row per level, or per zone)
    Zonal(ZonalArgs),
    /// Design risk of the zone mean and external indices across zones
    Design(DesignArgs),
    /// Zonal risk of circular neighborhoods around every field
    Radius(RadiusArgs),
    /// R̄² of random subsample-mean indices
    Experiment(ExperimentArgs),
    /// Simulate yields from fitted field regressions on the zone mean
    Simulate(SimulateArgs),
    /// Expected-utility evaluation of area-yield insurance per zone
    Eu(EuArgs),
    /// Quantile pseudo-R² of the zone-mean index per zone
    Quantile(QuantileArgs),
    /// Measurement-error regressions of predicted on ground-truth yields
    Measure(MeasureArgs),
}

#[derive(Args, Clone)]
pub struct Common {
    /// Random seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file; stdout when omitted. A `<out>.manifest.json` is written beside it.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Worker threads (0 = all cores)
    #[arg(long, env = "BASISRISK_THREADS", default_value_t = 0)]
    pub threads: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DenomArg {
    /// Divide sums of squares by T−1
    #[value(name = "t-1")]
    Unbiased,
    /// Divide by T
    #[value(name = "t")]
    Population,
}

impl From<DenomArg> for Denominator {
    fn from(d: DenomArg) -> Self {
        match d {
            DenomArg::Unbiased => Denominator::Unbiased,
            DenomArg::Population => Denominator::Population,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MetricArg {
    Avg,
    Total,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Avg => Metric::Avg,
            MetricArg::Total => Metric::Total,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AggArg {
    Mean,
    Sum,
}

impl From<AggArg> for TemporalAgg {
    fn from(a: AggArg) -> Self {
        match a {
            AggArg::Mean => TemporalAgg::Mean,
            AggArg::Sum => TemporalAgg::Sum,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Pooled,
    Temporal,
    Spatial,
}

impl From<ModeArg> for MeasurementMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Pooled => MeasurementMode::Pooled,
            ModeArg::Temporal => MeasurementMode::Temporal,
            ModeArg::Spatial => MeasurementMode::Spatial,
        }
    }
}

fn parse_level(s: &str) -> Result<ZoneLevel, String> {
    s.parse().map_err(|e: basisrisk::Error| e.to_string())
}

fn parse_pair(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .filter(|(k, v)| !k.is_empty() && !v.is_empty())
        .ok_or_else(|| format!("expected KEY=VALUE, got `{s}`"))
}

#[derive(Args, Clone)]
pub struct PanelArgs {
    /// Long-format yield CSV (field_id,period,yield[,lon,lat,zone_l1,zone_l2,zone_l3])
    #[arg(long)]
    pub yields: PathBuf,
    /// Column-name override, e.g. `yield=t_ha` (repeatable)
    #[arg(long = "column", value_name = "KEY=NAME", value_parser = parse_pair)]
    pub columns: Vec<(String, String)>,
    /// Drop fields lacking a value in some period instead of failing
    #[arg(long)]
    pub drop_incomplete: bool,
    /// Variance denominator
    #[arg(long, value_enum, default_value_t = DenomArg::Unbiased)]
    pub denominator: DenomArg,
}

#[derive(Args, Clone)]
pub struct ZoneSelect {
    /// Zone level whose zones are analysed separately (L0 = whole panel)
    #[arg(long, value_parser = parse_level, default_value = "L0")]
    pub level: ZoneLevel,
}

#[derive(Args)]
pub struct ZonalArgs {
    #[command(flatten)]
    pub panel: PanelArgs,
    /// Levels to sweep [default: every level present]
    #[arg(long, value_parser = parse_level, value_delimiter = ',')]
    pub levels: Option<Vec<ZoneLevel>>,
    /// Zone areas CSV (level,zone_id,area_km2)
    #[arg(long)]
    pub areas: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = MetricArg::Avg)]
    pub metric: MetricArg,
    /// One row per zone instead of per level
    #[arg(long)]
    pub per_zone: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args)]
pub struct DesignArgs {
    #[command(flatten)]
    pub panel: PanelArgs,
    #[command(flatten)]
    pub zones: ZoneSelect,
    /// External index `NAME=PATH` (zone_id,period,value[,subperiod]); repeatable
    #[arg(long = "external", value_name = "NAME=PATH", value_parser = parse_pair)]
    pub externals: Vec<(String, String)>,
    /// Sub-periods forming the season window [default: all]
    #[arg(long, value_delimiter = ',')]
    pub subperiods: Option<Vec<String>>,
    /// Aggregation of sub-periods within a period
    #[arg(long, value_enum, default_value_t = AggArg::Mean)]
    pub agg: AggArg,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args)]
pub struct RadiusArgs {
    #[command(flatten)]
    pub panel: PanelArgs,
    /// Radii in meters
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "50,100,200,500,1000,2000,5000,10000,20000,50000"
    )]
    pub radii: Vec<f64>,
    /// Inner exclusion radius in meters for the second pass (0 disables it)
    #[arg(long, default_value_t = 50.0)]
    pub exclusion: f64,
    /// Neighborhoods with fewer fields are skipped
    #[arg(long, default_value_t = DEFAULT_MIN_FIELDS)]
    pub min_fields: usize,
    /// Emit the mean curve per radius instead of per-field rows
    #[arg(long)]
    pub curve: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub panel: PanelArgs,
    /// Subsample sizes
    #[arg(long, value_delimiter = ',', default_value = "10,20,50,100")]
    pub sizes: Vec<usize>,
    /// Replications per size
    #[arg(long, default_value_t = 200)]
    pub replications: usize,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub panel: PanelArgs,
    /// Simulated years
    #[arg(long, default_value_t = DEFAULT_HORIZON)]
    pub horizon: usize,
    /// Restrict to one zone (requires --level)
    #[arg(long, requires = "level")]
    pub zone: Option<String>,
    #[arg(long, value_parser = parse_level)]
    pub level: Option<ZoneLevel>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args)]
pub struct EuArgs {
    #[command(flatten)]
    pub panel: PanelArgs,
    #[command(flatten)]
    pub zones: ZoneSelect,
    /// Trigger λ: indemnity paid below λ × mean zone yield
    #[arg(long, default_value_t = DEFAULT_TRIGGER)]
    pub trigger: f64,
    /// Relative risk aversion θ of the CRRA utility
    #[arg(long, default_value_t = DEFAULT_CRRA)]
    pub crra: f64,
    /// Quantile τ for the pseudo-R² column
    #[arg(long, default_value_t = DEFAULT_TAU)]
    pub tau: f64,
    /// Evaluate on simulated rather than observed yields
    #[arg(long)]
    pub simulate: bool,
    /// Simulated years (with --simulate)
    #[arg(long, default_value_t = DEFAULT_HORIZON)]
    pub horizon: usize,
    /// One row per field instead of per zone
    #[arg(long)]
    pub per_field: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args)]
pub struct QuantileArgs {
    #[command(flatten)]
    pub panel: PanelArgs,
    #[command(flatten)]
    pub zones: ZoneSelect,
    /// Quantile τ
    #[arg(long, default_value_t = DEFAULT_TAU)]
    pub tau: f64,
    /// Add the pooled ratio 1 − ΣV(f,τ)/ΣV(1,τ)
    #[arg(long)]
    pub pooled: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args)]
pub struct MeasureArgs {
    /// Ground-truth yields (same layout as --yields)
    #[arg(long)]
    pub truth: PathBuf,
    /// Predicted yields for the same fields and periods
    #[arg(long)]
    pub predicted: PathBuf,
    /// Column-name override, e.g. `yield=t_ha` (repeatable)
    #[arg(long = "column", value_name = "KEY=NAME", value_parser = parse_pair)]
    pub columns: Vec<(String, String)>,
    /// Regression modes [default: pooled,temporal,spatial]
    #[arg(long, value_enum, value_delimiter = ',')]
    pub modes: Option<Vec<ModeArg>>,
    #[command(flatten)]
    pub common: Common,
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Zonal(a) => &a.common,
            Command::Design(a) => &a.common,
            Command::Radius(a) => &a.common,
            Command::Experiment(a) => &a.common,
            Command::Simulate(a) => &a.common,
            Command::Eu(a) => &a.common,
            Command::Quantile(a) => &a.common,
            Command::Measure(a) => &a.common,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let started = Instant::now();
    let common = cli.command.common().clone();
    if common.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(common.threads)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    let result = match &cli.command {
        Command::Zonal(a) => commands::zonal(a),
        Command::Design(a) => commands::design(a),
        Command::Radius(a) => commands::radius(a),
        Command::Experiment(a) => commands::experiment(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Eu(a) => commands::eu(a),
        Command::Quantile(a) => commands::quantile(a),
        Command::Measure(a) => commands::measure(a),
    }?;
    let bytes = result.table.render(common.format)?;
    let manifest = output::RunManifest {
        command_line: std::env::args().collect(),
        inputs: result.inputs,
        seed: common.seed,
        threads: rayon::current_num_threads(),
        wall_time: started.elapsed(),
    };
    output::emit(&bytes, common.out.as_deref(), &manifest)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                CliError::Input(_) => ExitCode::from(2),
                CliError::Runtime(_) => ExitCode::from(1),
            }
        }
    }
}
