use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod io;

use commands::Outcome;

#[derive(Debug, Parser)]
#[command(name = "relu-interp", version, about = "Interpolation-matrix analysis for ReLU networks")]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalOpts {
    /// Relative singular-value tolerance for rank decisions.
    #[arg(long, global = true, default_value_t = relu_interp::DEFAULT_RANK_TOL)]
    pub tol: f64,
    /// Pre-activations at or below this count as inactive.
    #[arg(long, global = true, default_value_t = relu_interp::DEFAULT_TAU_ACT)]
    pub tau_act: f64,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Write the artifact here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[arg(long, global = true, default_value_t = relu_interp::solvers::DEFAULT_MAX_COMBOS)]
    pub max_combos: usize,
    /// Iteration budget: time blocks for the space/time search.
    #[arg(long, global = true, default_value_t = 10)]
    pub budget: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build or analyze interpolation matrices.
    #[command(subcommand)]
    Matrix(MatrixCmd),
    /// Activation-mode matrices.
    #[command(subcommand)]
    Mode(ModeCmd),
    /// Output-layer solvers.
    #[command(subcommand)]
    Solve(SolveCmd),
    /// Constructive classifiers.
    #[command(subcommand)]
    Construct(ConstructCmd),
    /// Activation routes and collapse sets.
    #[command(subcommand)]
    Route(RouteCmd),
    /// Layerwise activation sparsity.
    #[command(subcommand)]
    Sparsity(SparsityCmd),
    /// Decompositions of a dataset into affine pieces.
    #[command(subcommand)]
    Decompose(DecomposeCmd),
    /// Disentanglement of the last hidden layer's codes.
    #[command(subcommand)]
    Disentangle(DisentangleCmd),
    /// Full-batch gradient descent.
    #[command(subcommand)]
    Train(TrainCmd),
    /// Alternating output solve and hidden-layer training.
    #[command(subcommand)]
    Search(SearchCmd),
}

#[derive(Debug, Subcommand)]
pub enum MatrixCmd {
    /// Post-activation matrix of one hidden layer over a dataset.
    Build {
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Hidden layer, 0-based; defaults to the last one.
        #[arg(long)]
        layer: Option<usize>,
    },
    /// Rank, singularity, sparsity and the positive-column check.
    Analyze {
        /// Matrix as JSON or headerless CSV.
        #[arg(long)]
        matrix: PathBuf,
        /// Input dimension for the positive-column check.
        #[arg(long)]
        input_dim: Option<usize>,
    },
}

#[derive(Debug, Subcommand)]
pub enum ModeCmd {
    /// Classify the blocks of a partitioned matrix.
    Extract {
        #[arg(long)]
        matrix: PathBuf,
        /// Row groups such as `0,1;2`; defaults to the labels of `--data`.
        #[arg(long)]
        rows: Option<String>,
        /// Dataset whose subdomain labels give the row groups.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Column groups such as `0;1,2`; grouped by activation pattern if omitted.
        #[arg(long)]
        cols: Option<String>,
    },
    /// Permute a mode matrix into lower-triangular form.
    Normalize {
        /// Mode grid as JSON or whitespace-separated text.
        #[arg(long)]
        mode: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct TargetArgs {
    /// Dataset supplying the targets.
    #[arg(long, conflicts_with = "targets")]
    pub data: Option<PathBuf>,
    /// Targets as a JSON array or one value per line.
    #[arg(long)]
    pub targets: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum SolveCmd {
    /// Block lower-triangular solve.
    Triangular {
        #[arg(long)]
        matrix: PathBuf,
        #[command(flatten)]
        targets: TargetArgs,
        /// Block sizes such as `2,1,3`.
        #[arg(long)]
        blocks: String,
    },
    /// Exact solves through nonsingular column selections.
    Overparam {
        #[arg(long)]
        matrix: PathBuf,
        #[command(flatten)]
        targets: TargetArgs,
        /// Values of unchosen coefficients such as `3=0.5,4=1`.
        #[arg(long)]
        free: Option<String>,
        /// Enumerate column subsets in seeded random order.
        #[arg(long)]
        random: bool,
        /// Keep enumerating after the first solution.
        #[arg(long)]
        all: bool,
    },
    /// Minimum-norm least-squares output weights.
    Fit {
        #[arg(long)]
        matrix: PathBuf,
        #[command(flatten)]
        targets: TargetArgs,
    },
    /// Least-squares fit of every target column of a dataset.
    Multi {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum ConstructCmd {
    /// Deep network separating the points inside a convex polytope.
    Classifier {
        #[arg(long)]
        polytope: PathBuf,
        /// Labelled points: subdomain 1 inside, 2 outside.
        #[arg(long)]
        data: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct RouteSource {
    #[arg(long)]
    pub network: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Point indices such as `0,3`.
    #[arg(long, conflicts_with = "subdomain")]
    pub points: Option<String>,
    /// Every point with this subdomain label.
    #[arg(long)]
    pub subdomain: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum RouteCmd {
    /// Units activated by a point or subset.
    Trace(RouteSource),
    /// Collapse sets, trajectories and duplicate-row counts of a route.
    Collapse(RouteSource),
}

#[derive(Debug, Subcommand)]
pub enum SparsityCmd {
    /// Zero fraction of every hidden layer's activation matrix.
    Report {
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum DecomposeCmd {
    /// Sample hyperplane cuts and fit each cell.
    Explore {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 1)]
        cuts: usize,
        #[arg(long, default_value_t = 100)]
        samples: usize,
    },
}

#[derive(Debug, Subcommand)]
pub enum DisentangleCmd {
    /// Check the last hidden layer (or a code matrix) against the labels.
    Check {
        #[arg(long, conflicts_with = "matrix")]
        network: Option<PathBuf>,
        /// Code matrix, one row per point of `--data`.
        #[arg(long)]
        matrix: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Starting network; a seeded one is drawn from `--hidden` otherwise.
    #[arg(long)]
    pub network: Option<PathBuf>,
    /// Hidden widths such as `4,3` for a seeded network.
    #[arg(long, conflicts_with = "network")]
    pub hidden: Option<String>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    /// Frozen layer indices such as `0,2`; the output layer is the last.
    #[arg(long)]
    pub freeze: Option<String>,
    #[arg(long, default_value_t = 10)]
    pub record_every: usize,
}

#[derive(Debug, Subcommand)]
pub enum TrainCmd {
    Run(TrainArgs),
}

#[derive(Debug, Subcommand)]
pub enum SearchCmd {
    /// `--budget` time blocks of `--steps` steps each.
    Spacetime(TrainArgs),
}

fn dispatch(command: Command, g: &GlobalOpts) -> anyhow::Result<Outcome> {
    match command {
        Command::Matrix(c) => commands::matrix(c, g),
        Command::Mode(c) => commands::mode(c, g),
        Command::Solve(c) => commands::solve(c, g),
        Command::Construct(c) => commands::construct(c, g),
        Command::Route(c) => commands::route(c, g),
        Command::Sparsity(c) => commands::sparsity(c, g),
        Command::Decompose(c) => commands::decompose(c, g),
        Command::Disentangle(c) => commands::disentangle(c, g),
        Command::Train(c) => commands::train(c, g),
        Command::Search(c) => commands::search(c, g),
    }
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("RELU_INTERP_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| relu_interp::Error::Usage(format!("RELU_INTERP_THREADS must be a count, got {raw:?}")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let validation = err.chain().any(|cause| {
        cause.downcast_ref::<relu_interp::Error>().is_some_and(relu_interp::Error::is_validation)
            || cause.is::<serde_json::Error>()
            || cause.is::<std::io::Error>()
            || cause.is::<io::InputError>()
    });
    if validation { 2 } else { 3 }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = configure_threads().and_then(|()| dispatch(cli.command, &cli.global)).and_then(|outcome| {
        io::emit(&outcome, cli.global.out.as_deref())?;
        Ok(outcome)
    });
    match result {
        Ok(outcome) if outcome.failed => ExitCode::from(3),
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
