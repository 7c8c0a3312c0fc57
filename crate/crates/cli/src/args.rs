use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(name = "factorbreak", version, about = "Separate factor-variance breaks from loading breaks in factor models")]
pub struct Cli {
    /// Cap on worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Transform, balance and standardize a raw panel and write it back out.
    Ingest(IngestArgs),
    /// Z and W break tests at a known date, with trace ratio and bootstrap interval.
    Test(TestArgs),
    /// Monte Carlo rejection frequencies for a grid of designs.
    Simulate(SimulateArgs),
    /// Block-bootstrap interval for the trace ratio only.
    BootstrapCi(BootstrapArgs),
    /// Restricted (W = 0) and unrestricted R² per series and category.
    R2Report(R2Args),
}

#[derive(Debug, Args, Serialize)]
pub struct PanelArgs {
    /// Panel CSV: period labels in the first column, series in the others.
    #[arg(long)]
    pub input: PathBuf,

    /// Rows above the data: series names, then optional rows such as the
    /// transformation codes.
    #[arg(long, default_value_t = 2)]
    pub header_rows: usize,

    /// Keep the transformed series on their original scale.
    #[arg(long)]
    pub no_standardize: bool,

    /// Sample window `START,END` (inclusive period labels), applied after
    /// transformation.
    #[arg(long, value_name = "START,END")]
    pub window: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct OutArgs {
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct BreakArgs {
    /// Last pre-break period, as a label (e.g. 1984Q1) or as the integer
    /// number of pre-break observations.
    #[arg(long = "break", value_name = "DATE")]
    pub break_date: String,

    /// Factor count `r`, or `r1,r2` for different counts before and after.
    #[arg(long, value_name = "R|R1,R2")]
    pub factors: String,
}

#[derive(Debug, Args, Serialize)]
pub struct HacArgs {
    /// Fixed Bartlett bandwidth for every HAC estimate.
    #[arg(long)]
    pub bandwidth: Option<usize>,

    /// Multiplier on the automatic bandwidth `floor(T^{1/3})`.
    #[arg(long)]
    pub bandwidth_scale: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum HolmArg {
    Pair,
    WithIndividual,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResidualArg {
    OwnRegime,
    PostBreakLoadings,
}

#[derive(Debug, Args, Serialize)]
pub struct IngestArgs {
    #[command(flatten)]
    pub panel: PanelArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct TestArgs {
    #[command(flatten)]
    pub panel: PanelArgs,
    #[command(flatten)]
    pub brk: BreakArgs,
    #[command(flatten)]
    pub hac: HacArgs,

    /// TOML or JSON file with test settings; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Significance level for the individual rejection count.
    #[arg(long)]
    pub level: Option<f64>,

    /// Bootstrap replications for the trace-ratio interval (0 skips it).
    #[arg(long)]
    pub reps: Option<usize>,

    /// Bootstrap block length (default `floor(T^{1/3})`).
    #[arg(long)]
    pub block_length: Option<usize>,

    /// Bootstrap seed.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Family for the Holm adjustment.
    #[arg(long, value_enum)]
    pub holm_family: Option<HolmArg>,

    /// Residuals entering the pre-break W-test variance.
    #[arg(long, value_enum)]
    pub w_residual: Option<ResidualArg>,

    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// Experiment grid (TOML or JSON): an `options` table and `cell` entries.
    #[arg(long)]
    pub grid: PathBuf,

    /// Replications per cell, overriding the grid.
    #[arg(long)]
    pub reps: Option<usize>,

    /// Master seed; cell `i` then uses seed `SEED + i`.
    #[arg(long)]
    pub seed: Option<u64>,

    #[arg(long)]
    pub level: Option<f64>,

    /// Also record the LM-like Z test.
    #[arg(long)]
    pub with_lm: bool,

    #[arg(long, value_enum)]
    pub w_residual: Option<ResidualArg>,

    #[command(flatten)]
    pub hac: HacArgs,

    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct BootstrapArgs {
    #[command(flatten)]
    pub panel: PanelArgs,
    #[command(flatten)]
    pub brk: BreakArgs,

    #[arg(long, default_value_t = factorbreak::bootstrap::DEFAULT_REPLICATIONS)]
    pub reps: usize,

    /// Block length (default `floor(T^{1/3})`).
    #[arg(long)]
    pub block_length: Option<usize>,

    /// Two-sided miscoverage of the interval.
    #[arg(long, default_value_t = 0.05)]
    pub level: f64,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct R2Args {
    #[command(flatten)]
    pub panel: PanelArgs,
    #[command(flatten)]
    pub brk: BreakArgs,

    /// CSV with columns `series_id,category`; every series must appear.
    #[arg(long)]
    pub categories: Option<PathBuf>,

    #[command(flatten)]
    pub out: OutArgs,
}
