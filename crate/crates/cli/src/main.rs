//! `cpvae`: train, transfer, generate, diagnose and evaluate from the shell.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "cpvae", version, about = "Simplex-constrained sequence VAE toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model; writes model.ckpt and train_log.csv.
    Train(TrainArgs),
    /// Match basis vectors to classes; writes basis.json.
    IdentifyBasis(ModelArgs),
    /// Move sentences to a target class; writes transfer.tsv and metrics.
    Transfer(TransferArgs),
    /// Reconstruct (or manipulate and decode) sentences; writes generations.tsv.
    Generate(TransferArgs),
    /// Switch topics part-way through generation; writes transitions.tsv.
    Transition(TransitionArgs),
    /// Latent-vacancy diagnostics: NLL shift report, mapper graphs, simplex export.
    Diagnose(DiagnoseArgs),
    /// Score a transfer.tsv, or cluster a labelled corpus.
    Eval(EvalArgs),
    /// Repeat the run recorded in a manifest into a new output directory.
    Rerun(RerunArgs),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// `key = value` configuration file; a `profile = ...` line picks the base profile.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Base hyperparameter profile: yelp, amazon, agnews or toy.
    #[arg(long)]
    pub profile: Option<String>,
    /// Sentences, one per line. Defaults to the built-in toy corpus.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Integer class per line, aligned with --input.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Labelled training sentences for classifiers, bases and mixtures.
    #[arg(long)]
    pub train_input: Option<PathBuf>,
    #[arg(long)]
    pub train_labels: Option<PathBuf>,
    /// Pretrained word vectors (`token v1 ... vd`). Defaults to synthetic vectors.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub output: PathBuf,
    /// Root seed; overrides the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Train the unconstrained 80-dimensional β-VAE baseline instead.
    #[arg(long)]
    pub baseline: bool,
}

#[derive(Args, Debug)]
pub struct ModelArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Sigma,
    TwoSigma,
    Extremum,
    Vertex,
}

#[derive(Args, Debug)]
pub struct TransferArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// `vertex` for CP-VAE checkpoints, a dimension strategy for the baseline.
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyArg>,
    /// Class name (negative, positive) or index. Transfer defaults to every class.
    #[arg(long)]
    pub target: Option<String>,
    /// basis.json from identify-basis; identified on the fly otherwise.
    #[arg(long)]
    pub basis: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub beam: usize,
}

#[derive(Args, Debug)]
pub struct TransitionArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Basis index used before the switch.
    #[arg(long)]
    pub from: usize,
    /// Basis index used from the switch on.
    #[arg(long)]
    pub to: usize,
    #[arg(long, default_value_t = 5)]
    pub switch_step: usize,
}

#[derive(Args, Debug)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyArg>,
    #[arg(long)]
    pub basis: Option<PathBuf>,
    /// Components of the aggregated-posterior mixture.
    #[arg(long, default_value_t = 10_000)]
    pub mixture_size: usize,
    /// Training codes fed to the mapper.
    #[arg(long, default_value_t = 100_000)]
    pub mapper_points: usize,
    /// Mapper resolutions.
    #[arg(long, value_delimiter = ',', default_values_t = [5usize, 10, 20])]
    pub intervals: Vec<usize>,
    #[arg(long, default_value_t = 0.25)]
    pub overlap: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EvalMode {
    Transfer,
    Cluster,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value_t = EvalMode::Transfer)]
    pub mode: EvalMode,
    /// Vocabulary source for transfer mode, p-argmax clusters for cluster mode.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Map clusters one-to-one instead of by majority.
    #[arg(long)]
    pub hungarian: bool,
}

#[derive(Args, Debug)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            eprintln!("{}", msg.lines().next().unwrap_or("invalid arguments"));
            return ExitCode::from(2);
        }
    };
    match commands::dispatch(cli.command, argv[1..].to_vec()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let chain: Vec<String> = e.chain().map(|c| c.to_string()).collect();
            eprintln!("error: {}", chain.join(": ").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
