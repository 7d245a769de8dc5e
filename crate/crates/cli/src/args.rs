use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pc_anatomy_core::inference::CovarianceRequest;
use pc_anatomy_core::panel::{Quarter, QuarterRange};

#[derive(Debug, Parser)]
#[command(name = "pc-anatomy", version, about = "Regional Phillips-curve estimation on MSA panels")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Summary statistics for the constructed variables, split pre/post.
    Describe(DescribeArgs),
    /// Fit Model I or Model II and print the comparative report.
    Estimate(EstimateArgs),
    /// Write the data behind Figures II, III or IV.
    Figures(FiguresArgs),
    /// Generate a synthetic panel in the ingest schema.
    Simulate(SimulateArgs),
    /// Monte Carlo bias and coverage study on the synthetic economy.
    Mc(McArgs),
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// Panel CSV with msa_id, quarter, CPI_core, CPI, vu, shift_share.
    #[arg(long)]
    pub input: PathBuf,
    /// Estimation window, inclusive.
    #[arg(long, default_value = "2001q1:2024q2")]
    pub window: QuarterRange,
    /// Tightness threshold for the tight-market dummy.
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub tau: f64,
    #[arg(long, default_value = "2020q1")]
    pub pandemic_onset: Quarter,
    /// Directory for output files; nothing is written when absent.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CovArg {
    Cluster,
    Dk,
}

#[derive(Debug, Clone, Args)]
pub struct CovArgs {
    #[arg(long, value_enum, default_value_t = CovArg::Cluster)]
    pub cov: CovArg,
    /// Driscoll-Kraay bandwidth; defaults to floor(4 (T/100)^(2/9)).
    #[arg(long)]
    pub dk_lags: Option<usize>,
}

impl CovArgs {
    pub fn request(&self) -> CovarianceRequest {
        match self.cov {
            CovArg::Cluster => CovarianceRequest::cluster(),
            CovArg::Dk => CovarianceRequest::dk(self.dk_lags),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct DescribeArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// First quarter of the post block; defaults to the pandemic onset.
    #[arg(long)]
    pub split: Option<Quarter>,
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub cov: CovArgs,
    /// 1: pandemic interaction, 2: tight-market interaction.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub model: u8,
    /// Custom design (TOML DesignSpec) instead of a named model.
    #[arg(long, conflicts_with = "model")]
    pub spec: Option<PathBuf>,
    /// Quarterly discount factor; defaults to 0.99^(1/4).
    #[arg(long)]
    pub beta: Option<f64>,
    /// Window for the pre-regime slack AR(1); defaults to the window up to the onset.
    #[arg(long)]
    pub ar1_pre: Option<QuarterRange>,
    /// Window for the post-regime slack AR(1); defaults to the onset on.
    #[arg(long)]
    pub ar1_post: Option<QuarterRange>,
    /// Use this slack persistence instead of estimating the pre AR(1).
    #[arg(long, allow_hyphen_values = true)]
    pub rho_pre: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub rho_post: Option<f64>,
    /// Print the machine-readable report on stdout instead of the table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Args)]
pub struct FiguresArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Figure number: 2, 3 or 4 (Figure I needs an expectations series and is omitted).
    #[arg(long)]
    pub which: u8,
    /// Comma-separated MSA ids for Figure III.
    #[arg(long, value_delimiter = ',')]
    pub msa: Vec<String>,
    /// Quantile bins in the binned Figure IV file.
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// TOML DgpConfig; omitted fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct McArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub model: u8,
    #[arg(long, default_value_t = 200)]
    pub reps: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}
