//! `fatfrac` command-line driver: phantom cohorts, fitting, evaluation and ML export.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Run(#[from] fatfrac::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Run(_) => 1,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::Run(_) => "runtime",
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "fatfrac", version, about = "Water-fat MRI phantoms, PDFF/R2* fitting and evaluation")]
struct Cli {
    /// Worker threads (default: one per core). Output does not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a cohort, MI-gate and split it, and write rasters + manifest.
    Phantom(PhantomArgs),
    /// Fit PDFF/R2* maps for every sample of a manifest.
    Fit(FitArgs),
    /// Score prediction rasters against ground truth.
    Eval(EvalArgs),
    /// Materialize train/val/test directories and a split index.
    ExportMl(ExportArgs),
    /// Run phantom, fit (all methods), eval and export-ml in sequence.
    Pipeline(PipelineArgs),
    /// Print the default configuration as TOML.
    Config,
}

#[derive(Args, Debug)]
pub struct ConfigArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Cohort seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct PhantomArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Number of subjects.
    #[arg(short, long)]
    pub n: Option<usize>,
    /// Output directory (default: $FATFRAC_OUT/cohort).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Skip the MI quality gate.
    #[arg(long)]
    pub no_filter: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Dixon,
    #[value(name = "baseline_r2s")]
    BaselineR2s,
    Nlls,
}

impl MethodArg {
    pub fn name(self) -> &'static str {
        match self {
            MethodArg::Dixon => "dixon",
            MethodArg::BaselineR2s => "baseline_r2s",
            MethodArg::Nlls => "nlls",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

impl SplitArg {
    pub fn parse_name(s: &str) -> Option<SplitArg> {
        SplitArg::from_str(s, false).ok()
    }

    pub fn split(self) -> Option<fatfrac::Split> {
        match self {
            SplitArg::Train => Some(fatfrac::Split::Train),
            SplitArg::Val => Some(fatfrac::Split::Val),
            SplitArg::Test => Some(fatfrac::Split::Test),
            SplitArg::All => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TruthArg {
    Target,
    Phantom,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Cohort manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum)]
    pub method: MethodArg,
    /// Output directory (default: $FATFRAC_OUT/predictions).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Restrict to one split (default: all samples).
    #[arg(long, value_enum, default_value = "all")]
    pub split: SplitArg,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory holding `<subject>_<method>_<quantity>` rasters.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Comma-separated methods; `target` scores the manifest targets.
    #[arg(long, value_delimiter = ',')]
    pub methods: Vec<String>,
    #[arg(long, value_enum)]
    pub truth: Option<TruthArg>,
    #[arg(long, value_enum)]
    pub split: Option<SplitArg>,
    /// Output directory (default: $FATFRAC_OUT/eval).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write scatter plots and windowed map PNGs.
    #[arg(long)]
    pub png: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory (default: $FATFRAC_OUT/ml).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Export even if the MI gate was not applied.
    #[arg(long)]
    pub allow_unfiltered: bool,
}

#[derive(Args, Debug)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(short, long)]
    pub n: Option<usize>,
    /// Output root (default: $FATFRAC_OUT/pipeline).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot configure thread pool: {e}")))?;
    }
    match cli.command {
        Command::Phantom(a) => commands::phantom(a),
        Command::Fit(a) => commands::fit(a),
        Command::Eval(a) => commands::eval(a),
        Command::ExportMl(a) => commands::export_ml(a),
        Command::Pipeline(a) => commands::pipeline(a),
        Command::Config => {
            print!("{}", config::RunConfig::default().to_toml()?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.kind());
            ExitCode::from(e.exit_code())
        }
    }
}
