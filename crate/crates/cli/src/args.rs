use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "ivimlab", version, about = "IVIM fitting, mask fusion and lung-volume analysis")]
pub struct Cli {
    /// Worker threads for voxel fitting (default: all cores).
    #[arg(long, global = true, env = "IVIMLAB_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic DWI series with known IVIM truth.
    Phantom(PhantomArgs),
    /// Fit IVIM parameter maps inside a mask.
    Fit(FitArgs),
    /// Fuse per-frame masks into one.
    Fuse(FuseArgs),
    /// Dice, Hausdorff distance and volumes of two masks.
    Metrics(MetricsArgs),
    /// Reduce fitted maps to one subject summary row.
    Summarize(SummarizeArgs),
    /// Cohort tables from subject summary rows.
    Report(ReportArgs),
    /// Train and test the oeTLV threshold classifier.
    Classify(ClassifyArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum NoiseKind {
    None,
    Gaussian,
    Rician,
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON phantom configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Noise model; needs --snr unless it is `none`.
    #[arg(long, value_enum)]
    pub noise: Option<NoiseKind>,
    #[arg(long)]
    pub snr: Option<f64>,
    /// Lattice size as nz,ny,nx.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub dims: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// 4D series (.nii).
    #[arg(long)]
    pub series: PathBuf,
    /// b-value sidecar (default: series path with .bval).
    #[arg(long)]
    pub bval: Option<PathBuf>,
    #[arg(long)]
    pub mask: PathBuf,
    /// Output directory for the maps and fit_log.json.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON fit configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// ADC uses b-values strictly above this (s/mm²).
    #[arg(long)]
    pub b_threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    /// Masks to fuse, all on one grid.
    #[arg(required = true)]
    pub masks: Vec<PathBuf>,
    /// olp (intersection), avg (strict majority) or lc (union).
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    pub a: PathBuf,
    pub b: PathBuf,
    /// CSV destination (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    /// Directory holding f.nii, d_star.nii and adc.nii.
    #[arg(long)]
    pub maps: PathBuf,
    /// Mask restricting the summary.
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long)]
    pub subject: String,
    /// FGR or Control.
    #[arg(long)]
    pub group: String,
    /// manual or automatic.
    #[arg(long)]
    pub source: String,
    /// Fusion strategy that produced the mask.
    #[arg(long)]
    pub strategy: String,
    /// Histogram bins for entropy.
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Summary CSV; a new row is appended if it exists.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Summary rows produced by `summarize`.
    pub summaries: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    /// Training cohort CSV (id, ga, group, tlv_ml).
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Test cohort CSV.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// JSON report destination (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}
