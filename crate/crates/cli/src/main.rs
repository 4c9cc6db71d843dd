//! `metaproj` command-line tool.
//!
//! Every command reads its inputs, writes its outputs and exits with 0 on
//! success, 2 on a configuration error, 3 on a data error and 4 on numeric
//! divergence.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use metaproj::error::ErrorClass;
use metaproj::Scheme;

#[derive(Parser, Debug)]
#[command(
    name = "metaproj",
    version,
    about = "Domain-invariant speaker-embedding projection with robust MAML"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Clone)]
pub struct ConfigArgs {
    /// JSON config: the full tree or just this command's section.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScorerArg {
    Cosine,
    Plda,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeArg {
    RobustMaml,
    StandardMaml,
    Mct,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::RobustMaml => Scheme::RobustMaml,
            SchemeArg::StandardMaml => Scheme::StandardMaml,
            SchemeArg::Mct => Scheme::Mct,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic multi-domain embedding dataset.
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split a dataset into seen (training) and held-out (evaluation) domains.
    Split {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long = "in", alias = "in-csv")]
        input: PathBuf,
        /// Comma-separated held-out domains; defaults to `split.held_out_domains`.
        #[arg(long, alias = "held-out-domains", value_delimiter = ',')]
        held_out: Option<Vec<String>>,
        #[arg(long)]
        out_train: PathBuf,
        #[arg(long)]
        out_eval: PathBuf,
    },
    /// Train a projection net.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long = "train", alias = "train-csv")]
        train_csv: PathBuf,
        /// Overrides `train.scheme`.
        #[arg(long, value_enum)]
        scheme: Option<SchemeArg>,
        /// Held-out dataset for periodic cosine-EER probes.
        #[arg(long)]
        probe: Option<PathBuf>,
        #[arg(long)]
        out_net: PathBuf,
        #[arg(long)]
        out_log: PathBuf,
    },
    /// Replace every vector by its projection-net embedding.
    Transform {
        #[arg(long)]
        net: PathBuf,
        #[arg(long = "in", alias = "in-csv")]
        input: PathBuf,
        #[arg(long = "out", alias = "out-csv")]
        output: PathBuf,
    },
    /// Fit LDA and PLDA on a dataset.
    FitBackend {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long = "in", alias = "in-csv")]
        input: PathBuf,
        #[arg(long)]
        out_lda: PathBuf,
        #[arg(long)]
        out_plda: PathBuf,
    },
    /// Sample verification trials from a dataset, within each domain.
    Trials {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long = "in", alias = "in-csv")]
        input: PathBuf,
        /// Emit every pair instead of sampling.
        #[arg(long)]
        all_pairs: bool,
        #[arg(long = "out")]
        output: PathBuf,
    },
    /// Score a trial list.
    Score {
        #[arg(long = "eval", alias = "eval-csv")]
        eval_csv: PathBuf,
        #[arg(long)]
        trials: PathBuf,
        #[arg(long, value_enum, default_value = "cosine")]
        scorer: ScorerArg,
        /// Projection net applied first.
        #[arg(long)]
        net: Option<PathBuf>,
        /// LDA applied after the net.
        #[arg(long)]
        lda: Option<PathBuf>,
        /// PLDA model (required by `--scorer plda`).
        #[arg(long)]
        plda: Option<PathBuf>,
        #[arg(long = "out", alias = "out-scores")]
        output: PathBuf,
    },
    /// Compute EERs from a scores file.
    Eval {
        #[arg(long)]
        scores: PathBuf,
        /// Dataset used to break the EER down by domain.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value = "cosine")]
        scoring: String,
        #[arg(long, default_value = "raw")]
        projector: String,
        /// Add rows to an existing report.
        #[arg(long)]
        append: bool,
        #[arg(long = "out", alias = "out-report")]
        output: PathBuf,
    },
    /// Run the raw / MCT / MAML comparison end to end.
    Experiment {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn run(cli: Cli) -> metaproj::Result<()> {
    match cli.command {
        Command::Synth { cfg, out } => commands::synth(&cfg, &out),
        Command::Split {
            cfg,
            input,
            held_out,
            out_train,
            out_eval,
        } => commands::split(&cfg, &input, held_out, &out_train, &out_eval),
        Command::Train {
            cfg,
            train_csv,
            scheme,
            probe,
            out_net,
            out_log,
        } => commands::train(
            &cfg,
            &train_csv,
            scheme.map(Into::into),
            probe.as_deref(),
            &out_net,
            &out_log,
        ),
        Command::Transform { net, input, output } => commands::transform(&net, &input, &output),
        Command::FitBackend {
            cfg,
            input,
            out_lda,
            out_plda,
        } => commands::fit_backend(&cfg, &input, &out_lda, &out_plda),
        Command::Trials {
            cfg,
            input,
            all_pairs,
            output,
        } => commands::trials(&cfg, &input, all_pairs, &output),
        Command::Score {
            eval_csv,
            trials,
            scorer,
            net,
            lda,
            plda,
            output,
        } => commands::score(
            &eval_csv,
            &trials,
            scorer,
            net.as_deref(),
            lda.as_deref(),
            plda.as_deref(),
            &output,
        ),
        Command::Eval {
            scores,
            dataset,
            scoring,
            projector,
            append,
            output,
        } => commands::eval(
            &scores,
            dataset.as_deref(),
            &scoring,
            &projector,
            append,
            &output,
        ),
        Command::Experiment { cfg, out_dir } => commands::experiment(&cfg, &out_dir),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            ExitCode::from(match e.class() {
                ErrorClass::Config => 2,
                ErrorClass::Data => 3,
                ErrorClass::Divergence => 4,
            })
        }
    }
}
