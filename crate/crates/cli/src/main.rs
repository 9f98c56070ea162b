mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "dsn", version, about = "Fit Dirichlet simplex nests with VLAD")]
struct Cli {
    /// Repeat for more log output (info, debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample synthetic datasets with ground truth.
    Generate(GenerateArgs),
    /// Fit vertices to a dataset.
    Fit(FitArgs),
    /// Score fitted vertices against ground truth.
    Eval(EvalArgs),
    /// Run a seeded simulation sweep.
    Experiment(ExperimentArgs),
    /// Tabulate gamma(alpha) and varphi(alpha); optionally estimate alpha for a dataset.
    AlphaCurve(AlphaCurveArgs),
    /// Build and save a gamma(alpha) lookup table.
    GammaTable(GammaTableArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum KernelArg {
    Noiseless,
    Gaussian,
    Poisson,
    Multinomial,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SweepArg {
    N,
    CMin,
    Alpha,
}

/// Model and sweep overrides shared by `generate` and `experiment`.
#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// JSON manifest; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// D = 100 preset.
    #[arg(long)]
    quick: bool,
    /// 20 seeds and full dimensions.
    #[arg(long, conflicts_with = "quick")]
    paper_scale: bool,
    #[arg(long, value_enum)]
    kernel: Option<KernelArg>,
    /// Gaussian noise standard deviation.
    #[arg(long)]
    sigma: Option<f64>,
    /// Words per multinomial document.
    #[arg(long)]
    trials: Option<u32>,
    /// Ambient dimension D.
    #[arg(short = 'D', long = "dim")]
    dim: Option<usize>,
    /// Number of vertices K.
    #[arg(short = 'K', long = "k")]
    k: Option<usize>,
    /// Symmetric value or comma-separated vector.
    #[arg(long, value_delimiter = ',')]
    alpha: Option<Vec<f64>>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    c_min: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Swept parameter; requires --values.
    #[arg(long, value_enum, requires = "values")]
    sweep: Option<SweepArg>,
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value = "data")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// vlad, vlad_alpha, gdm, gdm_mc, spa or external:<vertices path>.
    #[arg(long, default_value = "vlad")]
    method: String,
    #[arg(short = 'K', long = "k")]
    k: usize,
    /// Extension parameter; otherwise looked up at --alpha.
    #[arg(long)]
    gamma: Option<f64>,
    /// Known symmetric concentration.
    #[arg(long)]
    alpha: Option<f64>,
    /// Saved gamma table; built on the fly when absent.
    #[arg(long)]
    gamma_table: Option<PathBuf>,
    /// Monte-Carlo samples for gamma estimates.
    #[arg(long, default_value_t = dsn_core::extension::DEFAULT_MC_SAMPLES)]
    gamma_m: usize,
    #[arg(long, default_value_t = dsn_core::numerics::DEFAULT_RESTARTS)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fit raw counts instead of per-row proportions.
    #[arg(long)]
    no_normalize: bool,
    /// Keep extended multinomial vertices outside the probability simplex.
    #[arg(long)]
    no_clip: bool,
    #[arg(long, default_value_t = dsn_core::extension::DEFAULT_ALPHA_RANGE.0)]
    alpha_lo: f64,
    #[arg(long, default_value_t = dsn_core::extension::DEFAULT_ALPHA_RANGE.1)]
    alpha_hi: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Fit directory or vertices CSV.
    #[arg(long)]
    vertices: PathBuf,
    /// Dataset directory with truth, fit directory or vertices CSV.
    #[arg(long)]
    truth: PathBuf,
    /// Held-out dataset directory; defaults to <truth>/test when present.
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    no_normalize: bool,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Comma-separated method list.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Saved gamma table to use instead of building one.
    #[arg(long)]
    gamma_table: Option<PathBuf>,
    /// Monte-Carlo samples per gamma estimate.
    #[arg(long)]
    gamma_m: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    no_normalize: bool,
    /// Skip per-fit artifact directories.
    #[arg(long)]
    no_artifacts: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug)]
struct GridArgs {
    #[arg(short = 'K', long = "k", default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = dsn_core::extension::DEFAULT_ALPHA_RANGE.0)]
    lo: f64,
    #[arg(long, default_value_t = dsn_core::extension::DEFAULT_ALPHA_RANGE.1)]
    hi: f64,
    #[arg(long, default_value_t = dsn_core::extension::DEFAULT_GRID_POINTS)]
    points: usize,
    /// Monte-Carlo samples per grid point.
    #[arg(long, default_value_t = dsn_core::extension::DEFAULT_MC_SAMPLES)]
    m: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct AlphaCurveArgs {
    #[command(flatten)]
    grid: GridArgs,
    /// Saved gamma table to tabulate instead of building one.
    #[arg(long, conflicts_with_all = ["lo", "hi", "points", "m"])]
    gamma_table: Option<PathBuf>,
    /// Dataset directory; also estimates its alpha.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    no_normalize: bool,
    /// Seed for the dataset fit.
    #[arg(long, default_value_t = 0)]
    fit_seed: u64,
    #[arg(long, default_value = "alpha_curve")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GammaTableArgs {
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Fit(a) => commands::fit(a),
        Command::Eval(a) => commands::eval(a),
        Command::Experiment(a) => commands::experiment(a),
        Command::AlphaCurve(a) => commands::alpha_curve(a),
        Command::GammaTable(a) => commands::gamma_table(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
